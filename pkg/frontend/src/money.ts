/**
 * Monetary figures are rendered exactly as the API reported them. The
 * console does no currency arithmetic and no reformatting: a backend
 * amount of 2500 appears on screen as the four bytes "2500".
 */
export function verbatimAmount(value: number | string): string {
  return String(value);
}
