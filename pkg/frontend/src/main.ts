// DOM wiring for the review workflow: list -> open bundle -> click mask ->
// approve/reject (a / r keys, n for next) -> next bundle. All verdict state
// is authoritative on the server; this file only renders and forwards.

import { ApiError, getBundle, getProgress, listBundles, postComplete, postVerdict } from './api';
import { toSvgPoints } from './overlay';
import {
  applyCuration,
  buildPanels,
  findLabel,
  nextMask,
  setSiblings,
  type MaskRef,
} from './state';
import type { BundleDetail, BundleSummary, Verdict } from './types';
import './style.css';

const app = document.querySelector<HTMLDivElement>('#app')!;

interface ViewState {
  bundles: BundleSummary[];
  page: number;
  total: number;
  detail: BundleDetail | null;
  selected: MaskRef | null;
  busy: boolean;
}

const state: ViewState = {
  bundles: [],
  page: 1,
  total: 0,
  detail: null,
  selected: null,
  busy: false,
};

const PAGE_SIZE = 50;

function banner(message: string, retry?: () => void, reload?: boolean): void {
  const el = document.createElement('div');
  el.className = 'banner';
  el.textContent = message;
  if (retry) {
    const button = document.createElement('button');
    button.textContent = reload ? 'Reload bundle' : 'Retry';
    button.onclick = () => {
      el.remove();
      retry();
    };
    el.appendChild(button);
  }
  app.prepend(el);
  if (!retry) setTimeout(() => el.remove(), 4000);
}

async function refreshProgress(): Promise<void> {
  try {
    const progress = await getProgress();
    const total = progress.pending + progress.approved + progress.rejected;
    const done = total - progress.pending;
    const bar = document.querySelector<HTMLDivElement>('.progress-fill');
    const text = document.querySelector<HTMLSpanElement>('.progress-text');
    if (bar) bar.style.width = total ? `${(100 * done) / total}%` : '0%';
    if (text)
      text.textContent = `${progress.approved} approved / ${progress.rejected} rejected / ${progress.pending} pending`;
  } catch {
    // progress is cosmetic; the next verdict will retry it
  }
}

function renderShell(): void {
  app.innerHTML = `
    <header>
      <h1>vinefuse review</h1>
      <div class="progress"><div class="progress-fill"></div></div>
      <span class="progress-text"></span>
      <button id="finish">Finish curation</button>
    </header>
    <main id="content"></main>
    <footer>keys: a approve, r reject, n next</footer>
  `;
  document.querySelector<HTMLButtonElement>('#finish')!.onclick = async () => {
    try {
      await postComplete();
      banner('Curation marked complete.');
    } catch (err) {
      banner(`Could not complete: ${String(err)}`, () => void 0);
    }
  };
}

function content(): HTMLElement {
  return document.querySelector<HTMLElement>('#content')!;
}

async function showList(): Promise<void> {
  state.detail = null;
  state.selected = null;
  try {
    const page = await listBundles(state.page, PAGE_SIZE);
    state.bundles = page.bundles;
    state.total = page.total;
  } catch (err) {
    banner(`API unreachable: ${String(err)}`, () => void showList());
    return;
  }
  const rows = state.bundles
    .map(
      (b) => `
      <tr data-bundle="${b.bundle_id}">
        <td class="mono">${b.bundle_id}</td>
        <td>${b.modalities.join(', ')}</td>
        <td>${b.approved}</td><td>${b.rejected}</td><td>${b.pending}</td>
      </tr>`,
    )
    .join('');
  const pages = Math.max(1, Math.ceil(state.total / PAGE_SIZE));
  content().innerHTML = `
    <table class="bundles">
      <thead><tr><th>bundle</th><th>modalities</th><th>approved</th><th>rejected</th><th>pending</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <nav>
      <button id="prev" ${state.page <= 1 ? 'disabled' : ''}>prev</button>
      <span>page ${state.page} / ${pages}</span>
      <button id="next" ${state.page >= pages ? 'disabled' : ''}>next</button>
    </nav>
  `;
  content()
    .querySelectorAll<HTMLTableRowElement>('tr[data-bundle]')
    .forEach((row) => {
      row.onclick = () => void openBundle(row.dataset.bundle!);
    });
  content().querySelector<HTMLButtonElement>('#prev')!.onclick = () => {
    state.page -= 1;
    void showList();
  };
  content().querySelector<HTMLButtonElement>('#next')!.onclick = () => {
    state.page += 1;
    void showList();
  };
  void refreshProgress();
}

async function openBundle(bundleId: string): Promise<void> {
  try {
    state.detail = await getBundle(bundleId);
  } catch (err) {
    banner(`Could not load ${bundleId}: ${String(err)}`, () => void openBundle(bundleId));
    return;
  }
  state.selected = nextMask(state.detail, null);
  renderBundle();
}

function curationClass(curation: string): string {
  return `mask mask-${curation}`;
}

function renderBundle(): void {
  const detail = state.detail;
  if (!detail) return;
  const highlight = state.selected ? setSiblings(detail, state.selected) : [];
  const isHighlighted = (modality: string, index: number) =>
    highlight.some((m) => m.modality === modality && m.index === index);
  const panels = buildPanels(detail)
    .map((panel) => {
      const { frame, labels } = panel;
      const polys = labels
        .map((lb) => {
          const cls =
            curationClass(lb.curation) +
            (isHighlighted(lb.modality, lb.index) ? ' mask-selected' : '');
          return `<polygon class="${cls}" data-modality="${lb.modality}" data-index="${lb.index}"
                    points="${toSvgPoints(lb.polygon)}"><title>${lb.provenance} ${lb.confidence.toFixed(2)}</title></polygon>`;
        })
        .join('');
      const image = frame.image_url
        ? `<img src="${frame.image_url}" width="${frame.width}" height="${frame.height}" alt="${frame.modality}">`
        : `<div class="noimage" style="width:${frame.width}px;height:${frame.height}px"></div>`;
      return `
        <figure class="panel">
          <figcaption>${frame.modality} <small>(${frame.split})</small></figcaption>
          <div class="stack" style="width:${frame.width}px;height:${frame.height}px">
            ${image}
            <svg viewBox="0 0 ${frame.width} ${frame.height}" width="${frame.width}" height="${frame.height}">${polys}</svg>
          </div>
        </figure>`;
    })
    .join('');
  content().innerHTML = `
    <nav><button id="back">back to list</button>
      <span class="mono">${detail.bundle_id}</span>
      <button id="approve">approve (a)</button>
      <button id="reject">reject (r)</button>
      <button id="skip">next (n)</button>
    </nav>
    <section class="panels">${panels}</section>
  `;
  content().querySelector<HTMLButtonElement>('#back')!.onclick = () => void showList();
  content().querySelector<HTMLButtonElement>('#approve')!.onclick = () =>
    void verdictSelected('approved');
  content().querySelector<HTMLButtonElement>('#reject')!.onclick = () =>
    void verdictSelected('rejected');
  content().querySelector<HTMLButtonElement>('#skip')!.onclick = () => selectNext();
  content()
    .querySelectorAll<SVGPolygonElement>('polygon')
    .forEach((poly) => {
      poly.onclick = () => {
        state.selected = {
          modality: poly.dataset.modality!,
          index: Number(poly.dataset.index),
        };
        renderBundle();
      };
    });
  void refreshProgress();
}

function selectNext(): void {
  if (!state.detail) return;
  const next = nextMask(state.detail, state.selected);
  if (next === null) {
    void showList();
    return;
  }
  state.selected = next;
  renderBundle();
}

async function verdictSelected(verdict: Verdict): Promise<void> {
  const detail = state.detail;
  const ref = state.selected;
  if (!detail || !ref || state.busy) return;
  const label = findLabel(detail, ref);
  if (!label) return;
  // optimistic update, rolled back on any non-2xx
  const { detail: optimistic, prior } = applyCuration(detail, ref, verdict);
  state.detail = optimistic;
  state.busy = true;
  renderBundle();
  try {
    await postVerdict(detail.bundle_id, ref.modality, ref.index, verdict, detail.revision);
    state.detail = { ...state.detail, revision: state.detail.revision + 1 };
    selectNext();
  } catch (err) {
    state.detail = applyCuration(state.detail, ref, prior).detail;
    renderBundle();
    if (err instanceof ApiError && err.status === 409) {
      banner('Bundle is stale; another session changed it.', () =>
        void openBundle(detail.bundle_id),
        true,
      );
    } else {
      banner(`Verdict failed: ${String(err)}`, () => void verdictSelected(verdict));
    }
  } finally {
    state.busy = false;
  }
}

document.addEventListener('keydown', (event) => {
  if (!state.detail) return;
  if (event.key === 'a') void verdictSelected('approved');
  else if (event.key === 'r') void verdictSelected('rejected');
  else if (event.key === 'n') selectNext();
});

renderShell();
void showList();
