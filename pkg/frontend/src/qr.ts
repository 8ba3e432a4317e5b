import QRCode from 'qrcode';

/** Render text (the invoice's canonical JSON) as an SVG QR code. */
export function textToQrSvg(text: string): Promise<string> {
  return QRCode.toString(text, {
    type: 'svg',
    errorCorrectionLevel: 'M',
    margin: 1
  });
}
