/** Manipulation-op descriptors and client-side validation mirroring the
 * service's rules, so obvious mistakes fail before the round trip. */

export interface ColorizeOp {
  op: "colorize";
  color: [number, number, number];
  mode?: "replace" | "balanced";
}

export interface ScaleOp {
  op: "scale";
  epsilon: number;
}

export interface Placement {
  translation?: [number, number, number];
  rotation?: [number, number, number, number];
  scale?: number;
}

export interface CopyPasteOp {
  op: "copy_paste";
  placement: Placement;
}

export interface CombineOp {
  op: "combine";
  source_scene: string;
  source_selection: string;
  placement?: Placement;
}

export interface RemoveOp {
  op: "remove";
}

export interface EditOp {
  op: "edit";
  editor: string;
  steps: number;
  step_size: number;
  annealing?: boolean;
  instruction?: string;
}

export type OpDescriptor =
  | ColorizeOp
  | ScaleOp
  | CopyPasteOp
  | CombineOp
  | RemoveOp
  | EditOp;

export const OP_NAMES = [
  "colorize",
  "scale",
  "copy_paste",
  "combine",
  "remove",
  "edit",
] as const;

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function validPlacement(p: unknown, errors: string[]): void {
  if (p === undefined) return;
  if (typeof p !== "object" || p === null) {
    errors.push("placement must be an object");
    return;
  }
  const pl = p as Placement;
  if (pl.translation !== undefined &&
      (pl.translation.length !== 3 || !pl.translation.every(isFiniteNumber))) {
    errors.push("placement.translation must be 3 finite numbers");
  }
  if (pl.rotation !== undefined) {
    if (pl.rotation.length !== 4 || !pl.rotation.every(isFiniteNumber)) {
      errors.push("placement.rotation must be a 4-component quaternion");
    } else {
      const norm = Math.hypot(...pl.rotation);
      if (norm < 1e-8) errors.push("placement.rotation must be nonzero");
    }
  }
  if (pl.scale !== undefined && (!isFiniteNumber(pl.scale) || pl.scale <= 0)) {
    errors.push("placement.scale must be positive");
  }
}

/** Returns a list of human-readable problems; empty means the descriptor is
 * well-formed for the service. */
export function validateOp(op: Partial<OpDescriptor>): string[] {
  const errors: string[] = [];
  switch (op.op) {
    case "colorize": {
      const c = (op as ColorizeOp).color;
      if (!c || c.length !== 3 || !c.every(isFiniteNumber)) {
        errors.push("colorize needs a 3-component color");
      } else if (c.some((v) => v < 0 || v > 1)) {
        errors.push("color channels must be in [0, 1]");
      }
      const mode = (op as ColorizeOp).mode;
      if (mode !== undefined && mode !== "replace" && mode !== "balanced") {
        errors.push("mode must be replace or balanced");
      }
      break;
    }
    case "scale": {
      const eps = (op as ScaleOp).epsilon;
      if (!isFiniteNumber(eps) || eps <= 0) {
        errors.push("scale needs a positive epsilon");
      }
      break;
    }
    case "copy_paste":
      if ((op as CopyPasteOp).placement === undefined) {
        errors.push("copy_paste needs a placement");
      } else {
        validPlacement((op as CopyPasteOp).placement, errors);
      }
      break;
    case "combine": {
      const c = op as CombineOp;
      if (!c.source_scene) errors.push("combine needs source_scene");
      if (!c.source_selection) errors.push("combine needs source_selection");
      validPlacement(c.placement, errors);
      break;
    }
    case "remove":
      break;
    case "edit": {
      const e = op as EditOp;
      if (!e.editor) errors.push("edit needs an editor");
      if (!isFiniteNumber(e.steps) || e.steps < 1 ||
          !Number.isInteger(e.steps)) {
        errors.push("edit needs a positive integer step count");
      }
      if (!isFiniteNumber(e.step_size) || e.step_size <= 0) {
        errors.push("edit needs a positive step size");
      }
      break;
    }
    default:
      errors.push(`unknown op ${String(op.op)}`);
  }
  return errors;
}
