import {
  BalanceView,
  UnreachableError,
  WalletInvoiceRow,
  getBalance,
  ingestInvoice,
  listWalletInvoices,
  payInvoice,
  requestTokens
} from './api';
import { verbatimAmount } from './money';
import { startPolling } from './poll';
import { ProgressList, clearError, h, showError, shortId } from './widgets';

const REQUEST_STAGES = ['blinding', 'issuer signing', 'unblinding', 'verified'];
const PAY_STAGES = ['relay pending', 'finalized', 'delivered'];

export class WalletView {
  private stopPoll: (() => void) | null = null;
  private requestProgress!: ProgressList;
  private payProgress!: ProgressList;

  constructor(
    private root: HTMLElement,
    private base: string,
    private onReachability: (down: boolean) => void
  ) {}

  mount(): void {
    this.root.innerHTML = `
      <h2>wallet</h2>
      <fieldset>
        <legend>request tokens against a claim</legend>
        <label>claim <input type="text" id="claim-id" value="claim-1" /></label>
        <label>amount <input type="number" id="request-amount" /></label>
        <button id="request-btn">request</button>
        <ol class="progress" id="request-progress"></ol>
      </fieldset>
      <div class="error-panel" id="wallet-error"></div>
      <fieldset>
        <legend>balance</legend>
        <div id="balance-summary" class="muted"></div>
        <table>
          <thead>
            <tr><th>denomination</th><th class="num">tokens</th></tr>
          </thead>
          <tbody id="balance-by-denomination"></tbody>
        </table>
        <table>
          <thead>
            <tr><th>token</th><th class="num">denomination</th><th>state</th></tr>
          </thead>
          <tbody id="token-rows"></tbody>
        </table>
      </fieldset>
      <fieldset>
        <legend>pay an invoice</legend>
        <textarea id="invoice-paste" rows="4"
          placeholder="paste the invoice JSON from the point of sale"></textarea>
        <button id="ingest-btn">add invoice</button>
        <ol class="progress" id="pay-progress"></ol>
        <table>
          <thead>
            <tr><th>invoice</th><th class="num">amount</th><th>status</th><th></th></tr>
          </thead>
          <tbody id="wallet-invoices"></tbody>
        </table>
      </fieldset>
    `;
    this.requestProgress = new ProgressList(
      this.root.querySelector('#request-progress') as HTMLOListElement,
      REQUEST_STAGES
    );
    this.payProgress = new ProgressList(
      this.root.querySelector('#pay-progress') as HTMLOListElement,
      PAY_STAGES
    );
    (this.root.querySelector('#request-btn') as HTMLButtonElement).onclick = () =>
      void this.handleRequest();
    (this.root.querySelector('#ingest-btn') as HTMLButtonElement).onclick = () =>
      void this.handleIngest();

    this.stopPoll = startPolling(async () => {
      await this.refresh();
    });
  }

  stop(): void {
    this.stopPoll?.();
  }

  async refresh(): Promise<void> {
    try {
      const balance = await getBalance(this.base);
      this.renderBalance(balance);
      const invoices = await listWalletInvoices(this.base);
      this.renderInvoices(invoices);
      this.onReachability(false);
    } catch (err) {
      if (err instanceof UnreachableError) {
        this.onReachability(true);
        return;
      }
      throw err;
    }
  }

  private renderBalance(balance: BalanceView): void {
    const summary = this.root.querySelector('#balance-summary') as HTMLElement;
    summary.innerHTML = '';
    summary.append(
      'spendable ',
      h('b', { 'data-field': 'spendable' }, verbatimAmount(balance.spendable)),
      ' · pending ',
      h('b', { 'data-field': 'pending' }, verbatimAmount(balance.pending)),
      ' · spent ',
      h('b', { 'data-field': 'spent' }, verbatimAmount(balance.spent)),
      ' · total ',
      h('b', { 'data-field': 'total' }, verbatimAmount(balance.total))
    );

    const byDenomination = new Map<number, number>();
    for (const token of balance.spendable_tokens) {
      byDenomination.set(
        token.denomination,
        (byDenomination.get(token.denomination) ?? 0) + 1
      );
    }
    const denomBody = this.root.querySelector(
      '#balance-by-denomination'
    ) as HTMLElement;
    denomBody.innerHTML = '';
    for (const [denomination, count] of [...byDenomination.entries()].sort(
      (a, b) => b[0] - a[0]
    )) {
      denomBody.append(
        h(
          'tr',
          {},
          h('td', { class: 'num', 'data-field': 'denomination' },
            verbatimAmount(denomination)),
          h('td', { class: 'num' }, String(count))
        )
      );
    }

    const tokenBody = this.root.querySelector('#token-rows') as HTMLElement;
    tokenBody.innerHTML = '';
    for (const token of balance.spendable_tokens) {
      tokenBody.append(
        h(
          'tr',
          { 'data-token-id': token.token_id },
          h('td', { class: 'muted' }, shortId(token.token_id)),
          h('td', { class: 'num', 'data-field': 'denomination' },
            verbatimAmount(token.denomination)),
          h('td', {}, 'spendable')
        )
      );
    }
  }

  private renderInvoices(rows: WalletInvoiceRow[]): void {
    const body = this.root.querySelector('#wallet-invoices') as HTMLElement;
    body.innerHTML = '';
    for (const row of rows) {
      const tr = h(
        'tr',
        { 'data-invoice-id': row.invoice.invoice_id },
        h('td', { class: 'muted' }, shortId(row.invoice.invoice_id)),
        h('td', { class: 'num', 'data-field': 'amount' },
          verbatimAmount(row.invoice.amount)),
        h('td', { class: `invoice-status status-${row.status}` }, row.status)
      );
      const action = h('td', {});
      if (row.status === 'open') {
        const btn = h('button', { class: 'quiet' }, 'pay') as HTMLButtonElement;
        btn.onclick = () => void this.handlePay(row.invoice.invoice_id);
        action.append(btn);
      } else if (row.result) {
        action.append(
          h('span', { class: 'muted' }, `${row.result.token_count} tokens sent`)
        );
      }
      tr.append(action);
      body.append(tr);
    }
  }

  private async handleRequest(): Promise<void> {
    const errorPanel = this.root.querySelector('#wallet-error') as HTMLElement;
    clearError(errorPanel);
    this.requestProgress.reset();
    const claimId = (this.root.querySelector('#claim-id') as HTMLInputElement).value;
    const amount = Number(
      (this.root.querySelector('#request-amount') as HTMLInputElement).value
    );
    try {
      const balance = await requestTokens(this.base, claimId, amount);
      // the response's spendable tokens are the server's confirmation that
      // blinding, signing, unblinding and verification all completed
      for (const stage of REQUEST_STAGES) this.requestProgress.markDone(stage);
      this.renderBalance(balance);
      this.onReachability(false);
    } catch (err) {
      if (err instanceof UnreachableError) this.onReachability(true);
      showError(errorPanel, err);
    }
  }

  private async handleIngest(): Promise<void> {
    const errorPanel = this.root.querySelector('#wallet-error') as HTMLElement;
    clearError(errorPanel);
    const pasted = (this.root.querySelector('#invoice-paste') as HTMLTextAreaElement)
      .value;
    try {
      await ingestInvoice(this.base, JSON.parse(pasted));
      await this.refresh();
    } catch (err) {
      if (err instanceof UnreachableError) this.onReachability(true);
      showError(errorPanel, err);
    }
  }

  private async handlePay(invoiceId: string): Promise<void> {
    const errorPanel = this.root.querySelector('#wallet-error') as HTMLElement;
    clearError(errorPanel);
    this.payProgress.reset();
    try {
      const result = await payInvoice(this.base, invoiceId);
      // stage evidence is read off the response, never assumed: a proof on
      // every triple means the relay finalized the transfer, a paid
      // delivery receipt means the vendor accepted it
      this.payProgress.markDone('relay pending');
      if (result.triples.every((t) => t.proof !== undefined && t.proof !== null)) {
        this.payProgress.markDone('finalized');
      }
      if (result.summary.delivery && result.summary.delivery.status === 'paid') {
        this.payProgress.markDone('delivered');
      }
      await this.refresh();
    } catch (err) {
      if (err instanceof UnreachableError) this.onReachability(true);
      showError(errorPanel, err);
    }
  }
}
