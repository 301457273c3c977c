/** Browser entry point: wires the session state and API client to the DOM.
 * Layout: view image with click capture, orbit stepping, click polarity
 * toggle, segment button with job polling, overlay toggle, op panel, undo. */
import { ApiError, Client } from "./api.js";
import { validateOp } from "./ops.js";
import { pollJob } from "./poll.js";
import { UiState } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

export async function main(): Promise<void> {
  const client = new Client("");
  const statusEl = $<HTMLElement>("status");
  const setStatus = (msg: string) => {
    statusEl.textContent = msg;
  };

  const report = (err: unknown) => {
    setStatus(err instanceof ApiError
      ? `error ${err.status}: ${err.message}`
      : String(err));
  };

  setStatus("creating session…");
  const info = await client.createSession({
    generate: { seed: 0, n_objects: 3, orbit_views: 12, image_size: 128 },
  });
  const views = (await client.views(info.session_id)).views;
  const state = new UiState(info.session_id, views);
  setStatus(`session ${info.session_id}: ${info.n_gaussians} Gaussians`);

  const img = $<HTMLImageElement>("view");
  const refresh = () => {
    img.src = client.renderUrl(state.sessionId, state.currentView.id,
                               state.overlay, state.renderEpoch);
    $<HTMLElement>("view-label").textContent =
      `view ${state.currentView.id} / ${state.views.length}` +
      (state.selectedCount ? ` — ${state.selectedCount} selected` : "");
  };
  refresh();

  $<HTMLButtonElement>("prev").onclick = () => {
    state.stepView(-1);
    refresh();
  };
  $<HTMLButtonElement>("next").onclick = () => {
    state.stepView(1);
    refresh();
  };
  $<HTMLButtonElement>("overlay").onclick = () => {
    state.toggleOverlay();
    refresh();
  };

  img.onclick = async (ev) => {
    const rect = img.getBoundingClientRect();
    const v = state.currentView;
    const x = ((ev.clientX - rect.left) / rect.width) * v.width;
    const y = ((ev.clientY - rect.top) / rect.height) * v.height;
    const polarity =
      $<HTMLSelectElement>("polarity").value === "neg" ? "neg" : "pos";
    try {
      const click = state.addClick(x, y, polarity);
      await client.addClick(state.sessionId, click);
      setStatus(`${state.clicks.length} click(s)`);
    } catch (err) {
      report(err);
    }
  };

  $<HTMLButtonElement>("clear-clicks").onclick = async () => {
    state.clearClicks();
    await client.clearClicks(state.sessionId).catch(report);
    setStatus("clicks cleared");
  };

  $<HTMLButtonElement>("segment").onclick = async () => {
    if (!state.hasPositiveClick) {
      setStatus("need at least one positive click");
      return;
    }
    try {
      const { job_id } = await client.segment(state.sessionId);
      setStatus("segmenting…");
      const status = await pollJob(client, job_id, {
        intervalMs: 500,
        onProgress: (s) => setStatus(
          `segmenting… ${(s.progress * 100).toFixed(0)}%`),
      });
      if (status.state === "error") {
        setStatus(`segmentation failed: ${status.error}`);
        return;
      }
      const sel = await client.selection(state.sessionId);
      state.applySelection(sel.indices.length);
      refresh();
      setStatus(`selected ${sel.indices.length} Gaussians`);
    } catch (err) {
      report(err);
    }
  };

  $<HTMLButtonElement>("apply-op").onclick = async () => {
    let op: Record<string, unknown>;
    try {
      op = JSON.parse($<HTMLTextAreaElement>("op-json").value);
    } catch {
      setStatus("op panel: invalid JSON");
      return;
    }
    const problems = validateOp(op as never);
    if (problems.length > 0) {
      setStatus(`op panel: ${problems.join("; ")}`);
      return;
    }
    try {
      const res = await client.applyOp(state.sessionId, op);
      if (res.job_id) {
        const status = await pollJob(client, res.job_id, { intervalMs: 500 });
        if (status.state === "error") {
          setStatus(`edit failed: ${status.error}`);
          return;
        }
        const trace = status.loss_trace ?? [];
        setStatus(`edit done, final loss ${trace[trace.length - 1] ?? 0}`);
        state.applyOpResult(state.versions + 1, state.selectedCount);
      } else {
        state.applyOpResult(res.versions, res.selected ?? 0);
        setStatus(`${op.op} applied (version ${res.versions})`);
      }
      refresh();
    } catch (err) {
      report(err);
    }
  };

  $<HTMLButtonElement>("undo").onclick = async () => {
    try {
      const res = await client.undo(state.sessionId);
      state.applyUndo(res.versions);
      refresh();
      setStatus(`undid to version ${res.versions}`);
    } catch (err) {
      report(err);
    }
  };
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  main().catch((err) => {
    const el = document.getElementById("status");
    if (el) el.textContent = String(err);
  });
}
