import {
  HoldingsView,
  InvoiceWire,
  RedemptionReceipt,
  UnreachableError,
  createInvoice,
  getHoldings,
  invoiceStatus,
  redeemHoldings
} from './api';
import { verbatimAmount } from './money';
import { startPolling } from './poll';
import { textToQrSvg } from './qr';
import { clearError, h, showError, shortId } from './widgets';

interface TrackedInvoice {
  wire: InvoiceWire;
  status: string;
  tokenCount: number | null;
}

export class PosView {
  private stopPoll: (() => void) | null = null;
  private tracked = new Map<string, TrackedInvoice>();
  private heldTokenIds: string[] = [];

  constructor(
    private root: HTMLElement,
    private base: string,
    private onReachability: (down: boolean) => void
  ) {}

  mount(): void {
    this.root.innerHTML = `
      <h2>point of sale</h2>
      <fieldset>
        <legend>new invoice</legend>
        <label>amount <input type="number" id="pos-amount" /></label>
        <label>ttl seconds <input type="number" id="pos-ttl" value="3600" /></label>
        <button id="create-invoice-btn">create invoice</button>
        <div id="invoice-handoff" style="display:none">
          <p class="muted">hand this to the payer: scan the code or paste the text</p>
          <div class="qr-holder" id="invoice-qr"></div>
          <textarea id="invoice-json" rows="5" readonly></textarea>
        </div>
      </fieldset>
      <div class="error-panel" id="pos-error"></div>
      <fieldset>
        <legend>invoices</legend>
        <table>
          <thead>
            <tr><th>invoice</th><th class="num">amount</th><th>status</th><th>paid with</th></tr>
          </thead>
          <tbody id="pos-invoices"></tbody>
        </table>
      </fieldset>
      <fieldset>
        <legend>holdings</legend>
        <div id="holdings-totals" class="muted"></div>
        <table>
          <thead>
            <tr><th>token</th><th class="num">denomination</th><th class="num">hops</th><th>status</th></tr>
          </thead>
          <tbody id="holdings-rows"></tbody>
        </table>
        <p><button id="redeem-btn">redeem held tokens</button></p>
        <div id="receipts"></div>
      </fieldset>
    `;
    (this.root.querySelector('#create-invoice-btn') as HTMLButtonElement).onclick =
      () => void this.handleCreate();
    (this.root.querySelector('#redeem-btn') as HTMLButtonElement).onclick = () =>
      void this.handleRedeem();

    this.stopPoll = startPolling(async () => {
      await this.refresh();
    });
  }

  stop(): void {
    this.stopPoll?.();
  }

  /** One polling pass: every tracked invoice's status plus the holdings
   *  table, each cell set straight from the server's answer. */
  async refresh(): Promise<void> {
    try {
      for (const [invoiceId, entry] of this.tracked) {
        const answer = await invoiceStatus(this.base, invoiceId);
        entry.status = answer.status;
        entry.tokenCount = answer.receipt ? answer.receipt.token_ids.length : null;
      }
      this.renderInvoices();
      this.renderHoldings(await getHoldings(this.base));
      this.onReachability(false);
    } catch (err) {
      if (err instanceof UnreachableError) {
        this.onReachability(true);
        return;
      }
      throw err;
    }
  }

  private renderInvoices(): void {
    const body = this.root.querySelector('#pos-invoices') as HTMLElement;
    body.innerHTML = '';
    for (const entry of this.tracked.values()) {
      body.append(
        h(
          'tr',
          { 'data-invoice-id': entry.wire.invoice_id },
          h('td', { class: 'muted' }, shortId(entry.wire.invoice_id)),
          h('td', { class: 'num', 'data-field': 'amount' },
            verbatimAmount(entry.wire.amount)),
          h('td', { class: `invoice-status status-${entry.status}` }, entry.status),
          h('td', { class: 'muted' },
            entry.tokenCount === null ? '' : `${entry.tokenCount} tokens`)
        )
      );
    }
  }

  private renderHoldings(view: HoldingsView): void {
    const totals = this.root.querySelector('#holdings-totals') as HTMLElement;
    totals.innerHTML = '';
    totals.append(
      'held ',
      h('b', { 'data-field': 'held' }, verbatimAmount(view.totals.held)),
      ' · redeemed ',
      h('b', { 'data-field': 'redeemed' }, verbatimAmount(view.totals.redeemed)),
      ' · transferred ',
      h('b', { 'data-field': 'transferred' }, verbatimAmount(view.totals.transferred))
    );

    const body = this.root.querySelector('#holdings-rows') as HTMLElement;
    body.innerHTML = '';
    const sections: Array<[string, HoldingsView['held']]> = [
      ['held', view.held],
      ['redeemed', view.redeemed],
      ['transferred', view.transferred]
    ];
    for (const [status, rows] of sections) {
      for (const row of rows) {
        body.append(
          h(
            'tr',
            { 'data-token-id': row.token_id },
            h('td', { class: 'muted' }, shortId(row.token_id)),
            h('td', { class: 'num', 'data-field': 'denomination' },
              verbatimAmount(row.denomination)),
            h('td', { class: 'num' }, String(row.hops)),
            h('td', {}, status)
          )
        );
      }
    }
    this.heldTokenIds = view.held.map((row) => row.token_id);
  }

  private async handleCreate(): Promise<void> {
    const errorPanel = this.root.querySelector('#pos-error') as HTMLElement;
    clearError(errorPanel);
    const amount = Number(
      (this.root.querySelector('#pos-amount') as HTMLInputElement).value
    );
    const ttl = Number(
      (this.root.querySelector('#pos-ttl') as HTMLInputElement).value
    );
    try {
      const { wire, raw } = await createInvoice(this.base, amount, ttl);
      this.tracked.set(wire.invoice_id, { wire, status: 'open', tokenCount: null });
      const handoff = this.root.querySelector('#invoice-handoff') as HTMLElement;
      handoff.style.display = 'block';
      (this.root.querySelector('#invoice-json') as HTMLTextAreaElement).value = raw;
      (this.root.querySelector('#invoice-qr') as HTMLElement).innerHTML =
        await textToQrSvg(raw);
      this.renderInvoices();
      this.onReachability(false);
    } catch (err) {
      if (err instanceof UnreachableError) this.onReachability(true);
      showError(errorPanel, err);
    }
  }

  private async handleRedeem(): Promise<void> {
    const errorPanel = this.root.querySelector('#pos-error') as HTMLElement;
    clearError(errorPanel);
    try {
      const receipt = await redeemHoldings(this.base, this.heldTokenIds);
      this.renderReceipt(receipt);
      await this.refresh();
    } catch (err) {
      if (err instanceof UnreachableError) this.onReachability(true);
      showError(errorPanel, err);
    }
  }

  private renderReceipt(receipt: RedemptionReceipt): void {
    const box = h('div', { class: 'receipt' });
    box.append(
      h('div', {},
        'gross ', h('b', { 'data-field': 'gross' }, verbatimAmount(receipt.gross)),
        ' · withheld ',
        h('b', { 'data-field': 'withheld' }, verbatimAmount(receipt.withheld)),
        ' · net ', h('b', { 'data-field': 'net' }, verbatimAmount(receipt.net))
      ),
      h('div', { class: 'muted' },
        `${receipt.token_ids.length} tokens · ${receipt.payout_ref} · ${receipt.policy_version}`)
    );
    (this.root.querySelector('#receipts') as HTMLElement).prepend(box);
  }
}
