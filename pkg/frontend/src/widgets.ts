import { BackendError, UnreachableError } from './api';
import { verbatimAmount } from './money';

/** Small element builder: h('td', {class: 'num'}, '2500'). */
export function h(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

/**
 * Surface a backend rejection verbatim: the reason code exactly as the
 * server sent it, the message, and for cannot-compose the two nearest
 * composable amounts from the error details.
 */
export function showError(panel: HTMLElement, err: unknown): void {
  panel.innerHTML = '';
  panel.classList.add('visible');
  if (err instanceof BackendError) {
    panel.append(h('span', { class: 'code' }, err.code));
    panel.append(' ');
    panel.append(h('span', {}, err.message));
    if (err.code === 'cannot-compose') {
      const below = err.details['nearest_below'];
      const above = err.details['nearest_above'];
      const hint = h('div', { class: 'muted' });
      hint.append(`nearest composable below: ${verbatimAmount(below as number)}`);
      if (above !== null && above !== undefined) {
        hint.append(`, above: ${verbatimAmount(above as number)}`);
      }
      panel.append(hint);
    }
    return;
  }
  if (err instanceof UnreachableError) {
    panel.append(h('span', { class: 'code' }, 'unreachable'));
    panel.append(' ');
    panel.append(h('span', {}, err.message));
    return;
  }
  panel.append(h('span', { class: 'code' }, 'error'));
  panel.append(' ');
  panel.append(h('span', {}, String(err)));
}

export function clearError(panel: HTMLElement): void {
  panel.classList.remove('visible');
  panel.innerHTML = '';
}

/**
 * An ordered list of operation stages. Each stage lights up only when the
 * response evidence for it has arrived; nothing is inferred client-side.
 */
export class ProgressList {
  private items = new Map<string, HTMLLIElement>();

  constructor(list: HTMLOListElement, stages: string[]) {
    list.innerHTML = '';
    for (const stage of stages) {
      const li = document.createElement('li');
      li.textContent = stage;
      li.dataset['stage'] = stage;
      list.append(li);
      this.items.set(stage, li);
    }
  }

  markDone(stage: string): void {
    this.items.get(stage)?.classList.add('done');
  }

  reset(): void {
    for (const li of this.items.values()) li.classList.remove('done');
  }
}

/** First 10 characters of an identifier, for table cells. */
export function shortId(id: string): string {
  return id.length > 10 ? `${id.slice(0, 10)}…` : id;
}
