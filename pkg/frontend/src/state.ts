/** UI session state: orbit-view stepping, click bookkeeping, overlay and
 * version tracking. Pure logic, no DOM. */
import { ClickPoint, Polarity, ViewInfo } from "./api.js";

export type Overlay = "none" | "mask";

export class UiState {
  sessionId: string;
  views: ViewInfo[];
  viewIndex = 0;
  clicks: ClickPoint[] = [];
  overlay: Overlay = "none";
  selectedCount = 0;
  versions = 1;
  /** bumped whenever the scene content may have changed (op / undo) */
  renderEpoch = 0;

  constructor(sessionId: string, views: ViewInfo[]) {
    if (views.length === 0) throw new Error("session has no views");
    this.sessionId = sessionId;
    this.views = views;
  }

  get currentView(): ViewInfo {
    return this.views[this.viewIndex];
  }

  /** Step around the orbit; wraps at both ends. */
  stepView(delta: number): ViewInfo {
    const n = this.views.length;
    this.viewIndex = ((this.viewIndex + delta) % n + n) % n;
    return this.currentView;
  }

  selectView(id: number): ViewInfo {
    const idx = this.views.findIndex((v) => v.id === id);
    if (idx < 0) throw new Error(`unknown view ${id}`);
    this.viewIndex = idx;
    return this.currentView;
  }

  /** Record a click at image coordinates in the current view; rejects
   * out-of-frame points the same way the service would. */
  addClick(x: number, y: number, polarity: Polarity): ClickPoint {
    const v = this.currentView;
    if (x < 0 || y < 0 || x >= v.width || y >= v.height) {
      throw new Error(`click (${x}, ${y}) outside ${v.width}x${v.height}`);
    }
    const click: ClickPoint = { view_id: v.id, x, y, polarity };
    this.clicks.push(click);
    return click;
  }

  clearClicks(): void {
    this.clicks = [];
  }

  get hasPositiveClick(): boolean {
    return this.clicks.some((c) => c.polarity === "pos");
  }

  /** Called after a segmentation job finishes successfully. */
  applySelection(selectedCount: number): void {
    this.selectedCount = selectedCount;
    this.overlay = "mask";
  }

  /** Called after an op response; tracks version count and invalidates any
   * cached renders. */
  applyOpResult(versions: number, selectedCount: number): void {
    this.versions = versions;
    this.selectedCount = selectedCount;
    this.renderEpoch += 1;
    if (selectedCount === 0) this.overlay = "none";
  }

  applyUndo(versions: number): void {
    this.versions = versions;
    this.renderEpoch += 1;
  }

  toggleOverlay(): Overlay {
    this.overlay = this.overlay === "mask" ? "none" : "mask";
    return this.overlay;
  }
}
