import { ConsoleConfig } from './config';
import { PosView } from './pos-view';
import { WalletView } from './wallet-view';

export interface MountedConsole {
  wallet: WalletView;
  pos: PosView;
  stop: () => void;
}

/**
 * Build the two panes inside `root` and start their polling loops. The
 * offline banner (looked up by id in the surrounding document) turns on
 * whenever either backend stops answering and off on the next success.
 */
export function mountConsole(root: HTMLElement, config: ConsoleConfig): MountedConsole {
  root.innerHTML = '';
  const walletPane = document.createElement('section');
  walletPane.className = 'pane';
  walletPane.id = 'wallet-pane';
  const posPane = document.createElement('section');
  posPane.className = 'pane';
  posPane.id = 'pos-pane';
  root.append(walletPane, posPane);

  const banner = document.getElementById('offline-banner');
  const down = { wallet: false, merchant: false };
  const updateBanner = () => {
    if (!banner) return;
    banner.classList.toggle('visible', down.wallet || down.merchant);
  };

  const wallet = new WalletView(walletPane, config.walletBase, (isDown) => {
    down.wallet = isDown;
    updateBanner();
  });
  const pos = new PosView(posPane, config.merchantBase, (isDown) => {
    down.merchant = isDown;
    updateBanner();
  });
  wallet.mount();
  pos.mount();

  const baseLabel = document.getElementById('base-urls');
  if (baseLabel) {
    baseLabel.textContent = `wallet ${config.walletBase} · merchant ${config.merchantBase}`;
  }

  return {
    wallet,
    pos,
    stop: () => {
      wallet.stop();
      pos.stop();
    }
  };
}
