import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { mountConsole, MountedConsole } from '../src/main';
import { FakeBackend, MERCHANT_BASE, WALLET_BASE } from './fake-backend';

const CONFIG = { walletBase: WALLET_BASE, merchantBase: MERCHANT_BASE };

let fake: FakeBackend;
let mounted: MountedConsole;

function text(selector: string): string {
  const node = document.querySelector(selector);
  expect(node, `missing element ${selector}`).not.toBeNull();
  return (node as HTMLElement).textContent ?? '';
}

async function flush(times = 4): Promise<void> {
  for (let i = 0; i < times; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

async function waitUntil(check: () => boolean, timeoutMs = 4000): Promise<void> {
  const start = Date.now();
  while (Date.now() - start < timeoutMs) {
    if (check()) return;
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
  expect(check(), 'condition not reached within the timeout').toBe(true);
}

function setInput(selector: string, value: string): void {
  (document.querySelector(selector) as HTMLInputElement).value = value;
}

function click(selector: string): void {
  (document.querySelector(selector) as HTMLButtonElement).click();
}

beforeEach(() => {
  document.body.innerHTML = `
    <div id="offline-banner"></div>
    <main id="app"></main>
  `;
  fake = new FakeBackend();
  vi.stubGlobal('fetch', fake.fetch);
  mounted = mountConsole(document.getElementById('app')!, CONFIG);
});

afterEach(() => {
  mounted.stop();
  vi.unstubAllGlobals();
});

describe('scripted purchase', () => {
  it('drives request, invoice, pay, paid, redeem with server-verbatim figures', async () => {
    await flush();

    // -- wallet requests 7500 against a claim -------------------------------
    setInput('#claim-id', 'claim-1');
    setInput('#request-amount', '7500');
    click('#request-btn');
    await waitUntil(() => document.querySelectorAll('#token-rows tr').length === 3);

    const stages = document.querySelectorAll('#request-progress li.done');
    expect([...stages].map((li) => li.textContent)).toEqual([
      'blinding',
      'issuer signing',
      'unblinding',
      'verified'
    ]);

    // three token rows, denominations byte-equal to the API's balance view
    const balance = fake.lastBalanceBody as any;
    const rows = document.querySelectorAll('#token-rows tr');
    expect(rows.length).toBe(3);
    rows.forEach((row, i) => {
      const cell = row.querySelector('td[data-field="denomination"]')!;
      expect(cell.textContent).toBe(String(balance.spendable_tokens[i].denomination));
    });
    expect(text('#balance-summary b[data-field="spendable"]')).toBe(
      String(balance.spendable)
    );
    expect(text('#balance-summary b[data-field="spendable"]')).toBe('7500');

    // the wallet response carries token wires with secret seeds; none of
    // that may ever reach the page
    expect(document.body.innerHTML).not.toContain('SEEDSECRET');

    // -- point of sale creates a 2500 invoice -------------------------------
    setInput('#pos-amount', '2500');
    click('#create-invoice-btn');
    await waitUntil(
      () =>
        (document.querySelector('#invoice-json') as HTMLTextAreaElement).value !== ''
    );

    // the copyable box holds the server's exact canonical bytes, and the
    // QR rendering of those bytes is on screen
    const handedOver = (document.querySelector('#invoice-json') as HTMLTextAreaElement)
      .value;
    expect(handedOver).toBe(fake.lastInvoiceRaw);
    expect(
      (document.querySelector('#invoice-qr') as HTMLElement).innerHTML
    ).toContain('<svg');
    expect(text('#pos-invoices td[data-field="amount"]')).toBe('2500');

    // -- wallet pastes the invoice and pays ----------------------------------
    (document.querySelector('#invoice-paste') as HTMLTextAreaElement).value =
      handedOver;
    click('#ingest-btn');
    await waitUntil(
      () => document.querySelectorAll('#wallet-invoices tr').length === 1
    );
    expect(text('#wallet-invoices td[data-field="amount"]')).toBe('2500');

    click('#wallet-invoices button');
    await waitUntil(
      () => document.querySelectorAll('#pay-progress li.done').length === 3
    );
    const payStages = document.querySelectorAll('#pay-progress li.done');
    expect([...payStages].map((li) => li.textContent)).toEqual([
      'relay pending',
      'finalized',
      'delivered'
    ]);

    // -- the merchant pane sees the payment within a polling interval -------
    await waitUntil(() =>
      text('#pos-invoices .invoice-status').includes('paid')
    );
    expect(text('#pos-invoices tr')).toContain('2 tokens');
    await waitUntil(
      () => document.querySelectorAll('#holdings-rows tr').length === 2
    );
    expect(text('#holdings-totals b[data-field="held"]')).toBe('2500');
    const hopCells = document.querySelectorAll('#holdings-rows td:nth-child(3)');
    expect([...hopCells].map((c) => c.textContent)).toEqual(['1', '1']);

    // wallet's own invoice listing flips to paid
    await waitUntil(() =>
      text('#wallet-invoices .invoice-status').includes('paid')
    );
    expect(text('#balance-summary b[data-field="spendable"]')).toBe('5000');
    expect(text('#balance-summary b[data-field="spent"]')).toBe('2500');

    // -- redeem and read the receipt straight off the server ----------------
    click('#redeem-btn');
    await waitUntil(() => document.querySelectorAll('#receipts .receipt').length === 1);
    const receipt = fake.lastReceiptBody as any;
    expect(text('.receipt b[data-field="gross"]')).toBe(String(receipt.gross));
    expect(text('.receipt b[data-field="withheld"]')).toBe(String(receipt.withheld));
    expect(text('.receipt b[data-field="net"]')).toBe(String(receipt.net));
    expect(text('.receipt b[data-field="gross"]')).toBe('2500');
    expect(text('.receipt b[data-field="withheld"]')).toBe('500');
    expect(text('.receipt b[data-field="net"]')).toBe('2000');

    await waitUntil(() =>
      text('#holdings-totals b[data-field="redeemed"]').includes('2500')
    );
    expect(text('#holdings-totals b[data-field="held"]')).toBe('0');

    // every monetary cell on the page is a bare digit string, exactly as
    // the JSON integers arrive (no separators, no currency symbols)
    for (const cell of document.querySelectorAll('[data-field]')) {
      expect(cell.textContent).toMatch(/^\d+$/);
    }
  }, 30000);
});

describe('error surfacing', () => {
  it('shows cannot-compose with the nearest composable amounts', async () => {
    await flush();
    setInput('#request-amount', '5000');
    click('#request-btn');
    await waitUntil(() => document.querySelectorAll('#token-rows tr').length === 1);

    setInput('#pos-amount', '999');
    click('#create-invoice-btn');
    await waitUntil(
      () =>
        (document.querySelector('#invoice-json') as HTMLTextAreaElement).value !== ''
    );
    const invoiceJson = (document.querySelector('#invoice-json') as HTMLTextAreaElement)
      .value;
    (document.querySelector('#invoice-paste') as HTMLTextAreaElement).value =
      invoiceJson;
    click('#ingest-btn');
    await waitUntil(
      () => document.querySelectorAll('#wallet-invoices button').length === 1
    );
    click('#wallet-invoices button');

    await waitUntil(() =>
      document.querySelector('#wallet-error')!.classList.contains('visible')
    );
    const panel = text('#wallet-error');
    expect(text('#wallet-error .code')).toBe('cannot-compose');
    expect(panel).toContain('nearest composable below: 0');
    expect(panel).toContain('above: 5000');
  }, 30000);

  it('surfaces a redemption rejection verbatim', async () => {
    await flush();
    setInput('#request-amount', '2500');
    click('#request-btn');
    await waitUntil(() => document.querySelectorAll('#token-rows tr').length === 2);

    setInput('#pos-amount', '2500');
    click('#create-invoice-btn');
    await waitUntil(
      () =>
        (document.querySelector('#invoice-json') as HTMLTextAreaElement).value !== ''
    );
    (document.querySelector('#invoice-paste') as HTMLTextAreaElement).value = (
      document.querySelector('#invoice-json') as HTMLTextAreaElement
    ).value;
    click('#ingest-btn');
    await waitUntil(
      () => document.querySelectorAll('#wallet-invoices button').length === 1
    );
    click('#wallet-invoices button');
    await waitUntil(
      () => document.querySelectorAll('#holdings-rows tr').length === 2
    );

    fake.revoked = true;
    click('#redeem-btn');
    await waitUntil(() =>
      document.querySelector('#pos-error')!.classList.contains('visible')
    );
    expect(text('#pos-error .code')).toBe('revoked-certificate');
    expect(text('#pos-error')).toContain('vendor certificate was revoked');
    expect(document.querySelectorAll('#receipts .receipt').length).toBe(0);
  }, 30000);

  it('raises the offline banner while a backend is unreachable', async () => {
    await flush();
    await waitUntil(
      () => !document.getElementById('offline-banner')!.classList.contains('visible')
    );
    fake.down = true;
    await waitUntil(() =>
      document.getElementById('offline-banner')!.classList.contains('visible')
    );
    fake.down = false;
    await waitUntil(
      () => !document.getElementById('offline-banner')!.classList.contains('visible')
    );
  }, 30000);
});
