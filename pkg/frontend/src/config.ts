export interface ConsoleConfig {
  walletBase: string;
  merchantBase: string;
}

/**
 * The console is configured by exactly two base URLs, taken from the
 * query string (?wallet=...&merchant=...) with local defaults matching
 * the CLI serve ports.
 */
export function readConfig(search: string = window.location.search): ConsoleConfig {
  const params = new URLSearchParams(search);
  return {
    walletBase: params.get('wallet') ?? 'http://127.0.0.1:8402',
    merchantBase: params.get('merchant') ?? 'http://127.0.0.1:8403'
  };
}
