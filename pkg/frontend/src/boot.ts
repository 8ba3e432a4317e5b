import { readConfig } from './config';
import { mountConsole } from './main';

const app = document.getElementById('app');
if (app) {
  mountConsole(app, readConfig());
}
