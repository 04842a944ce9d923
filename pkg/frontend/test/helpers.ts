import type { BundleDetail, LabelPayload } from '../src/types';

export function label(partial: Partial<LabelPayload> & { modality: string; index: number }): LabelPayload {
  return {
    polygon: [
      [10, 5],
      [20, 5],
      [20, 40],
      [10, 40],
    ],
    curation: 'pending',
    confidence: 0.9,
    provenance: 'annotator',
    mask_id: `b01:${partial.modality}:${String(partial.index).padStart(3, '0')}`,
    set_id: null,
    ...partial,
  };
}

export function detail(overrides: Partial<BundleDetail> = {}): BundleDetail {
  return {
    bundle_id: 'b0000000000000',
    revision: 0,
    frames: [
      { modality: 'nir', width: 64, height: 48, split: 'train', image_url: '/api/images/b0000000000000_nir' },
      { modality: 'thermal', width: 80, height: 64, split: 'train', image_url: null },
      { modality: 'visual', width: 64, height: 48, split: 'train', image_url: '/api/images/b0000000000000_visual' },
    ],
    labels: [
      label({ modality: 'nir', index: 0, set_id: 's000' }),
      label({ modality: 'visual', index: 0, set_id: 's000' }),
      label({ modality: 'visual', index: 1 }),
    ],
    ...overrides,
  };
}

type FetchCall = { url: string; init?: RequestInit };

export function stubFetch(
  responder: (url: string, init?: RequestInit) => { status: number; body: unknown },
): { calls: FetchCall[] } {
  const calls: FetchCall[] = [];
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    const { status, body } = responder(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { 'content-type': 'application/json' },
    });
  }) as typeof fetch;
  return { calls };
}
