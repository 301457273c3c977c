/** Job polling: query the job endpoint on an interval until it settles. */
import { Client, JobStatus } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onProgress?: (status: JobStatus) => void;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Resolves with the final status ("done" or "error"); rejects only on
 * timeout or transport failure. */
export async function pollJob(
  client: Client,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobStatus> {
  const interval = opts.intervalMs ?? 500;
  const timeout = opts.timeoutMs ?? 300_000;
  const deadline = Date.now() + timeout;
  for (;;) {
    const status = await client.job(jobId);
    opts.onProgress?.(status);
    if (status.state === "done" || status.state === "error") {
      return status;
    }
    if (Date.now() >= deadline) {
      throw new Error(`job ${jobId} did not settle within ${timeout} ms`);
    }
    await sleep(interval);
  }
}
