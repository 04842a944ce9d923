import { describe, expect, it } from 'vitest';

import { ApiError, getBundle, getProgress, listBundles, postVerdict } from '../src/api';
import { stubFetch } from './helpers';

describe('api client', () => {
  it('lists bundles with paging parameters', async () => {
    const { calls } = stubFetch(() => ({
      status: 200,
      body: { bundles: [], total: 0, page: 2, size: 10 },
    }));
    const page = await listBundles(2, 10);
    expect(page.page).toBe(2);
    expect(calls[0].url).toBe('/api/bundles?page=2&size=10');
  });

  it('posts verdicts with only verdict and revision in the body', async () => {
    const { calls } = stubFetch(() => ({
      status: 200,
      body: { ok: true, revision: 4, curation: 'approved' },
    }));
    const result = await postVerdict('b01', 'visual', 2, 'approved', 3);
    expect(result.revision).toBe(4);
    expect(calls[0].url).toBe('/api/labels/b01/visual/2/verdict');
    const body = JSON.parse(String(calls[0].init?.body));
    // the UI never originates geometry: the payload carries no polygon
    expect(Object.keys(body).sort()).toEqual(['revision', 'verdict']);
    expect(body.verdict).toBe('approved');
    expect(body.revision).toBe(3);
  });

  it('omits revision when not supplied', async () => {
    const { calls } = stubFetch(() => ({
      status: 200,
      body: { ok: true, revision: 1, curation: 'rejected' },
    }));
    await postVerdict('b01', 'nir', 0, 'rejected');
    const body = JSON.parse(String(calls[0].init?.body));
    expect(Object.keys(body)).toEqual(['verdict']);
  });

  it('raises ApiError with the HTTP status on failure', async () => {
    stubFetch(() => ({ status: 409, body: { detail: 'stale revision' } }));
    await expect(postVerdict('b01', 'visual', 0, 'approved', 0)).rejects.toMatchObject({
      name: 'ApiError',
      status: 409,
    });
  });

  it('maps network failure to status 0', async () => {
    globalThis.fetch = (async () => {
      throw new TypeError('connection refused');
    }) as typeof fetch;
    try {
      await getProgress();
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(0);
    }
  });

  it('encodes bundle ids in paths', async () => {
    const { calls } = stubFetch(() => ({
      status: 200,
      body: { bundle_id: 'b01', revision: 0, frames: [], labels: [] },
    }));
    await getBundle('b01');
    expect(calls[0].url).toBe('/api/bundles/b01');
  });

  it('optimistic state mirrors server truth after a completed mutation', async () => {
    // tiny in-memory server: a verdict POST mutates what GET returns
    const { applyCuration } = await import('../src/state');
    const { detail: makeDetail } = await import('./helpers');
    let serverDetail = makeDetail();
    stubFetch((url, init) => {
      if (url.endsWith('/verdict') && init?.method === 'POST') {
        const verdict = JSON.parse(String(init.body)).verdict;
        serverDetail = applyCuration(
          serverDetail,
          { modality: 'visual', index: 0 },
          verdict,
        ).detail;
        return { status: 200, body: { ok: true, revision: 1, curation: verdict } };
      }
      return { status: 200, body: serverDetail };
    });
    const optimistic = applyCuration(
      makeDetail(),
      { modality: 'visual', index: 0 },
      'approved',
    ).detail;
    await postVerdict('b0000000000000', 'visual', 0, 'approved');
    const refetched = await getBundle('b0000000000000');
    expect(refetched.labels).toEqual(optimistic.labels);
  });
});
