/**
 * A fetch-level stand-in for the wallet and merchant local APIs, answering
 * with the same routes, field names, status codes and canonical JSON the
 * real services use. It keeps a tiny economy: minted tokens, invoices,
 * holdings, receipts. Tests read its state to check the screen renders
 * server values byte for byte.
 */

export const WALLET_BASE = 'http://wallet.test';
export const MERCHANT_BASE = 'http://merchant.test';

const DENOMINATIONS = [10000, 5000, 2000, 1000, 500, 100];
const TAX_RATE_PERCENT = 20;

interface FakeToken {
  denomination: number;
  token_id: string;
  state: 'spendable' | 'spent';
  seed: string;
}

interface FakeInvoice {
  wire: Record<string, unknown>;
  status: 'open' | 'paid';
  receipt: Record<string, unknown> | null;
}

function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(',')}]`;
  }
  if (value !== null && typeof value === 'object') {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(',')}}`;
  }
  return JSON.stringify(value);
}

function subsetSums(values: number[]): Set<number> {
  const sums = new Set<number>([0]);
  for (const v of values) {
    for (const s of [...sums]) sums.add(s + v);
  }
  return sums;
}

/** Pick tokens summing exactly to `amount`, or null if impossible. */
function selectExact(tokens: FakeToken[], amount: number): FakeToken[] | null {
  const pick: FakeToken[] = [];
  const search = (idx: number, remaining: number): boolean => {
    if (remaining === 0) return true;
    if (idx >= tokens.length || remaining < 0) return false;
    pick.push(tokens[idx]);
    if (search(idx + 1, remaining - tokens[idx].denomination)) return true;
    pick.pop();
    return search(idx + 1, remaining);
  };
  return search(0, amount) ? pick : null;
}

export class FakeBackend {
  tokens: FakeToken[] = [];
  walletInvoices = new Map<string, Record<string, unknown>>();
  walletResults = new Map<string, Record<string, unknown>>();
  merchantInvoices = new Map<string, FakeInvoice>();
  holdings: Array<{ token_id: string; denomination: number; hops: number; invoice_id: string; status: string }> = [];
  receipts: Array<Record<string, unknown>> = [];
  revoked = false;
  down = false;
  lastInvoiceRaw = '';
  lastBalanceBody: Record<string, unknown> = {};
  lastReceiptBody: Record<string, unknown> = {};
  private counter = 0;

  readonly fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    if (this.down) throw new TypeError('fetch failed');
    const url = String(input);
    const method = (init?.method ?? 'GET').toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    if (url.startsWith(WALLET_BASE)) {
      return this.wallet(method, url.slice(WALLET_BASE.length), body);
    }
    if (url.startsWith(MERCHANT_BASE)) {
      return this.merchant(method, url.slice(MERCHANT_BASE.length), body);
    }
    return this.error(404, 'not-found', `no route for ${url}`);
  };

  private respond(status: number, payload: unknown): Response {
    return new Response(canonicalJson(payload), {
      status,
      headers: { 'content-type': 'application/json' }
    });
  }

  private error(
    status: number,
    code: string,
    message: string,
    details: Record<string, unknown> = {}
  ): Response {
    return this.respond(status, { details, error: code, message });
  }

  private nextId(prefix: string): string {
    this.counter += 1;
    return `${prefix}${this.counter}x${this.counter.toString(36).repeat(6)}`;
  }

  private balanceBody(): Record<string, unknown> {
    const spendable = this.tokens.filter((t) => t.state === 'spendable');
    const spent = this.tokens.filter((t) => t.state === 'spent');
    const body = {
      pending: 0,
      spendable: spendable.reduce((a, t) => a + t.denomination, 0),
      spendable_tokens: [...spendable]
        .sort((a, b) => b.denomination - a.denomination || (a.token_id < b.token_id ? -1 : 1))
        .map((t) => ({ denomination: t.denomination, token_id: t.token_id })),
      spent: spent.reduce((a, t) => a + t.denomination, 0),
      total: this.tokens.reduce((a, t) => a + t.denomination, 0)
    };
    this.lastBalanceBody = body;
    return body;
  }

  // -- wallet routes -----------------------------------------------------------

  private wallet(method: string, path: string, body: any): Response {
    if (method === 'GET' && path === '/v1/balance') {
      return this.respond(200, this.balanceBody());
    }
    if (method === 'POST' && path === '/v1/request') {
      let remaining = Number(body.amount);
      const minted: FakeToken[] = [];
      for (const d of DENOMINATIONS) {
        while (remaining >= d) {
          minted.push({
            denomination: d,
            token_id: this.nextId('Tk'),
            state: 'spendable',
            seed: `SEEDSECRET-${this.counter}`
          });
          remaining -= d;
        }
      }
      if (remaining !== 0) {
        return this.error(400, 'bad-amount', 'amount not representable');
      }
      this.tokens.push(...minted);
      return this.respond(200, {
        balance: this.balanceBody(),
        tokens: minted.map((t) => ({
          denomination: t.denomination,
          seed: t.seed,
          state: t.state
        }))
      });
    }
    if (method === 'POST' && path === '/v1/invoices') {
      this.walletInvoices.set(String(body.invoice_id), body);
      return this.respond(200, body);
    }
    if (method === 'GET' && path === '/v1/invoices') {
      const rows = [...this.walletInvoices.keys()].sort().map((id) => {
        const result = this.walletResults.get(id);
        return result
          ? { invoice: this.walletInvoices.get(id), result, status: 'paid' }
          : { invoice: this.walletInvoices.get(id), status: 'open' };
      });
      return this.respond(200, { invoices: rows });
    }
    if (method === 'POST' && path === '/v1/pay') {
      const invoice = this.walletInvoices.get(String(body.invoice_id));
      if (!invoice) return this.error(404, 'unknown-invoice', 'ingest the invoice first');
      return this.payInvoice(invoice);
    }
    return this.error(404, 'not-found', `no wallet route ${method} ${path}`);
  }

  private payInvoice(invoice: Record<string, unknown>): Response {
    const amount = Number(invoice['amount']);
    const spendable = this.tokens.filter((t) => t.state === 'spendable');
    const chosen = selectExact(spendable, amount);
    if (chosen === null) {
      const sums = subsetSums(spendable.map((t) => t.denomination));
      const below = Math.max(...[...sums].filter((s) => s < amount));
      const aboveAll = [...sums].filter((s) => s > amount);
      const above = aboveAll.length ? Math.min(...aboveAll) : null;
      return this.error(400, 'cannot-compose', `holdings cannot compose ${amount} exactly`, {
        nearest_above: above,
        nearest_below: below
      });
    }

    const invoiceId = String(invoice['invoice_id']);
    const triples = chosen.map((t) => ({
      certs: [],
      prior: [],
      proof: { checkpoint: {}, leaf_index: 0, path: [], record: {}, type: 'pop' },
      record: { hop: 0, token_id: t.token_id },
      token: { denomination: t.denomination, token_pub: t.token_id }
    }));
    for (const t of chosen) t.state = 'spent';

    const entry = this.merchantInvoices.get(invoiceId);
    const receipt = {
      amount,
      bundle_digest: this.nextId('Bd'),
      invoice_id: invoiceId,
      status: 'paid',
      token_ids: chosen.map((t) => t.token_id).sort()
    };
    if (entry) {
      entry.status = 'paid';
      entry.receipt = receipt;
      for (const t of chosen) {
        this.holdings.push({
          token_id: t.token_id,
          denomination: t.denomination,
          hops: 1,
          invoice_id: invoiceId,
          status: 'held'
        });
      }
    }
    const summary = {
      delivery: receipt,
      invoice_id: invoiceId,
      token_count: triples.length
    };
    this.walletResults.set(invoiceId, summary);
    return this.respond(200, { invoice_id: invoiceId, summary, triples });
  }

  // -- merchant routes -----------------------------------------------------------

  private merchant(method: string, path: string, body: any): Response {
    if (method === 'POST' && path === '/v1/invoices') {
      const wire = {
        amount: Number(body.amount),
        expiry: Math.floor(Date.now() / 1000) + Number(body.ttl ?? 3600),
        invoice_id: this.nextId('Inv'),
        payment_url: `${MERCHANT_BASE}/v1/invoices/{invoice_id}/payment`,
        relay_url: '',
        type: 'invoice',
        vendor_cert: {
          legal_name: 'Corner Shop',
          tax_category: 'general',
          vendor_id: 'VendorPubKeyFake'
        }
      };
      this.merchantInvoices.set(String(wire.invoice_id), {
        wire,
        status: 'open',
        receipt: null
      });
      this.lastInvoiceRaw = canonicalJson(wire);
      return new Response(this.lastInvoiceRaw, {
        status: 200,
        headers: { 'content-type': 'application/json' }
      });
    }
    const statusMatch = path.match(/^\/v1\/invoices\/([^/]+)$/);
    if (method === 'GET' && statusMatch) {
      const entry = this.merchantInvoices.get(decodeURIComponent(statusMatch[1]));
      if (!entry) return this.error(400, 'unknown-invoice', statusMatch[1]);
      const out: Record<string, unknown> = { invoice: entry.wire, status: entry.status };
      if (entry.receipt) out['receipt'] = entry.receipt;
      return this.respond(200, out);
    }
    if (method === 'GET' && path === '/v1/holdings') {
      const section = (status: string) =>
        this.holdings
          .filter((h) => h.status === status)
          .map((h) => ({
            denomination: h.denomination,
            hops: h.hops,
            invoice_id: h.invoice_id,
            token_id: h.token_id
          }));
      const total = (status: string) =>
        this.holdings
          .filter((h) => h.status === status)
          .reduce((a, h) => a + h.denomination, 0);
      return this.respond(200, {
        held: section('held'),
        redeemed: section('redeemed'),
        transferred: section('transferred'),
        totals: {
          held: total('held'),
          redeemed: total('redeemed'),
          transferred: total('transferred')
        }
      });
    }
    if (method === 'POST' && path === '/v1/redeem') {
      if (this.revoked) {
        return this.error(400, 'revoked-certificate', 'vendor certificate was revoked');
      }
      const ids: string[] = body.token_ids;
      const chosen = this.holdings.filter(
        (h) => ids.includes(h.token_id) && h.status === 'held'
      );
      if (chosen.length !== ids.length) {
        return this.error(400, 'not-held', 'some tokens are not held');
      }
      const gross = chosen.reduce((a, h) => a + h.denomination, 0);
      const withheld = Math.floor((gross * TAX_RATE_PERCENT) / 100);
      for (const h of chosen) h.status = 'redeemed';
      const receipt = {
        gross,
        net: gross - withheld,
        payout_ref: `payout-${this.nextId('Pr')}`,
        policy_version: 'policy-1',
        receipt_id: this.nextId('Rc'),
        timestamp: Math.floor(Date.now() / 1000),
        token_ids: ids.slice().sort(),
        vendor_id: 'VendorPubKeyFake',
        withheld
      };
      this.receipts.push(receipt);
      this.lastReceiptBody = receipt;
      return this.respond(200, receipt);
    }
    return this.error(404, 'not-found', `no merchant route ${method} ${path}`);
  }
}
