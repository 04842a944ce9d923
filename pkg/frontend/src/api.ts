// Typed fetch client for the curation API. The UI only ever mutates verdict
// fields; it never sends label geometry.

import type { BundleDetail, BundlePage, Progress, Verdict } from './types';

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(path, init);
  } catch (err) {
    throw new ApiError(0, `API unreachable: ${String(err)}`);
  }
  if (!response.ok) {
    const body = await response.text().catch(() => '');
    throw new ApiError(response.status, body || response.statusText);
  }
  return (await response.json()) as T;
}

export function listBundles(page = 1, size = 50): Promise<BundlePage> {
  return request<BundlePage>(`/api/bundles?page=${page}&size=${size}`);
}

export function getBundle(bundleId: string): Promise<BundleDetail> {
  return request<BundleDetail>(`/api/bundles/${encodeURIComponent(bundleId)}`);
}

export interface VerdictResult {
  ok: boolean;
  revision: number;
  curation: string;
}

export function postVerdict(
  bundleId: string,
  modality: string,
  index: number,
  verdict: Verdict,
  revision?: number,
): Promise<VerdictResult> {
  const body: { verdict: Verdict; revision?: number } = { verdict };
  if (revision !== undefined) body.revision = revision;
  return request<VerdictResult>(
    `/api/labels/${encodeURIComponent(bundleId)}/${encodeURIComponent(modality)}/${index}/verdict`,
    {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    },
  );
}

export function getProgress(): Promise<Progress> {
  return request<Progress>('/api/progress');
}

export function postComplete(): Promise<{ ok: boolean }> {
  return request<{ ok: boolean }>('/api/complete', { method: 'POST' });
}
