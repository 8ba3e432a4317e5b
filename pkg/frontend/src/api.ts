/**
 * Typed fetch wrappers over the wallet and merchant local HTTP APIs.
 *
 * The console never computes with money and never touches key material:
 * every figure shown on screen is copied out of these responses, and the
 * token wires returned by the wallet's request endpoint are deliberately
 * not modelled here (the balance view carries everything the UI needs).
 */

export interface ApiErrorBody {
  error: string;
  message: string;
  details: Record<string, unknown>;
}

export class BackendError extends Error {
  readonly code: string;
  readonly details: Record<string, unknown>;

  constructor(body: ApiErrorBody, readonly status: number) {
    super(body.message || body.error);
    this.code = body.error;
    this.details = body.details ?? {};
  }
}

export class UnreachableError extends Error {
  constructor(readonly base: string) {
    super(`no response from ${base}`);
  }
}

export interface SpendableToken {
  denomination: number;
  token_id: string;
}

export interface BalanceView {
  pending: number;
  spendable: number;
  spendable_tokens: SpendableToken[];
  spent: number;
  total: number;
}

export interface InvoiceWire {
  amount: number;
  expiry: number;
  invoice_id: string;
  payment_url: string;
  relay_url: string;
  type: string;
  vendor_cert: Record<string, unknown>;
}

export interface WalletInvoiceRow {
  invoice: InvoiceWire;
  status: string;
  result?: PaySummary;
}

export interface PaySummary {
  delivery: PaymentReceipt | null;
  invoice_id: string;
  token_count: number;
}

export interface PayResult {
  invoice_id: string;
  triples: Array<{ proof?: unknown; record?: unknown }>;
  summary: PaySummary;
}

export interface PaymentReceipt {
  amount: number;
  bundle_digest: string;
  invoice_id: string;
  status: string;
  token_ids: string[];
}

export interface InvoiceStatus {
  invoice: InvoiceWire;
  status: string;
  receipt?: PaymentReceipt;
}

export interface HoldingRow {
  denomination: number;
  hops: number;
  invoice_id: string | null;
  token_id: string;
}

export interface HoldingsView {
  held: HoldingRow[];
  redeemed: HoldingRow[];
  transferred: HoldingRow[];
  totals: { held: number; redeemed: number; transferred: number };
}

export interface RedemptionReceipt {
  gross: number;
  net: number;
  payout_ref: string;
  policy_version: string;
  receipt_id: string;
  timestamp: number;
  token_ids: string[];
  vendor_id: string;
  withheld: number;
}

async function call(base: string, path: string, init?: RequestInit): Promise<Response> {
  let resp: Response;
  try {
    resp = await fetch(base + path, init);
  } catch {
    throw new UnreachableError(base);
  }
  if (!resp.ok) {
    let body: ApiErrorBody;
    try {
      body = (await resp.json()) as ApiErrorBody;
    } catch {
      body = { error: `http-${resp.status}`, message: resp.statusText, details: {} };
    }
    throw new BackendError(body, resp.status);
  }
  return resp;
}

async function getJson<T>(base: string, path: string): Promise<T> {
  const resp = await call(base, path);
  return (await resp.json()) as T;
}

async function postJson<T>(base: string, path: string, body: unknown): Promise<T> {
  const resp = await call(base, path, {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(body)
  });
  return (await resp.json()) as T;
}

// -- wallet -----------------------------------------------------------------

export function getBalance(base: string): Promise<BalanceView> {
  return getJson(base, '/v1/balance');
}

export async function requestTokens(
  base: string,
  claimId: string,
  amount: number
): Promise<BalanceView> {
  const out = await postJson<{ balance: BalanceView }>(base, '/v1/request', {
    claim_id: claimId,
    amount
  });
  return out.balance;
}

export function ingestInvoice(base: string, wire: unknown): Promise<InvoiceWire> {
  return postJson(base, '/v1/invoices', wire);
}

export async function listWalletInvoices(base: string): Promise<WalletInvoiceRow[]> {
  const out = await getJson<{ invoices: WalletInvoiceRow[] }>(base, '/v1/invoices');
  return out.invoices;
}

export function payInvoice(base: string, invoiceId: string): Promise<PayResult> {
  return postJson(base, '/v1/pay', { invoice_id: invoiceId });
}

// -- merchant -----------------------------------------------------------------

/** Returns the invoice along with the exact bytes the server sent, so the
 *  copyable box and the QR carry the server's canonical serialization. */
export async function createInvoice(
  base: string,
  amount: number,
  ttl: number
): Promise<{ wire: InvoiceWire; raw: string }> {
  const resp = await call(base, '/v1/invoices', {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify({ amount, ttl })
  });
  const raw = await resp.text();
  return { wire: JSON.parse(raw) as InvoiceWire, raw };
}

export function invoiceStatus(base: string, invoiceId: string): Promise<InvoiceStatus> {
  return getJson(base, `/v1/invoices/${encodeURIComponent(invoiceId)}`);
}

export function getHoldings(base: string): Promise<HoldingsView> {
  return getJson(base, '/v1/holdings');
}

export function redeemHoldings(
  base: string,
  tokenIds: string[]
): Promise<RedemptionReceipt> {
  return postJson(base, '/v1/redeem', { token_ids: tokenIds });
}
