export const POLL_INTERVAL_MS = 1000;

/**
 * Run `tick` now and then once per interval until the returned stop
 * function is called. A failing tick never breaks the loop; the next
 * attempt happens one interval later.
 */
export function startPolling(
  tick: () => Promise<void>,
  intervalMs: number = POLL_INTERVAL_MS
): () => void {
  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | undefined;

  const run = async () => {
    if (stopped) return;
    try {
      await tick();
    } catch {
      // transient errors are retried on the next interval
    }
    if (!stopped) timer = setTimeout(run, intervalMs);
  };

  void run();
  return () => {
    stopped = true;
    if (timer !== undefined) clearTimeout(timer);
  };
}
