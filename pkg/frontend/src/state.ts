// Pure view-model logic for the review session: panel construction from a
// bundle detail (partial bundles render only the modalities present),
// optimistic verdict application with rollback, and mask traversal order.

import type { BundleDetail, Curation, FramePayload, LabelPayload } from './types';

export interface Panel {
  frame: FramePayload;
  labels: LabelPayload[];
}

export function buildPanels(detail: BundleDetail): Panel[] {
  return detail.frames.map((frame) => ({
    frame,
    labels: detail.labels.filter((lb) => lb.modality === frame.modality),
  }));
}

export interface MaskRef {
  modality: string;
  index: number;
}

/** Review traversal: panels left to right, labels top to bottom. */
export function maskOrder(detail: BundleDetail): MaskRef[] {
  return buildPanels(detail).flatMap((panel) =>
    panel.labels.map((lb) => ({ modality: lb.modality, index: lb.index })),
  );
}

export function nextMask(detail: BundleDetail, current: MaskRef | null): MaskRef | null {
  const order = maskOrder(detail);
  if (order.length === 0) return null;
  if (current === null) return order[0];
  const at = order.findIndex(
    (m) => m.modality === current.modality && m.index === current.index,
  );
  if (at < 0 || at + 1 >= order.length) return null;
  return order[at + 1];
}

export function findLabel(detail: BundleDetail, ref: MaskRef): LabelPayload | undefined {
  return detail.labels.find(
    (lb) => lb.modality === ref.modality && lb.index === ref.index,
  );
}

/** Labels of every modality belonging to the same association set. */
export function setSiblings(detail: BundleDetail, ref: MaskRef): MaskRef[] {
  const label = findLabel(detail, ref);
  if (!label || !label.set_id) return [ref];
  return detail.labels
    .filter((lb) => lb.set_id === label.set_id)
    .map((lb) => ({ modality: lb.modality, index: lb.index }));
}

/** Immutable verdict application; returns the prior curation for rollback. */
export function applyCuration(
  detail: BundleDetail,
  ref: MaskRef,
  curation: Curation,
): { detail: BundleDetail; prior: Curation } {
  const target = findLabel(detail, ref);
  if (!target) throw new Error(`no label ${ref.modality}[${ref.index}]`);
  const labels = detail.labels.map((lb) =>
    lb.modality === ref.modality && lb.index === ref.index ? { ...lb, curation } : lb,
  );
  return { detail: { ...detail, labels }, prior: target.curation };
}

export function progressOf(details: BundleDetail[]): {
  pending: number;
  approved: number;
  rejected: number;
} {
  const counts = { pending: 0, approved: 0, rejected: 0 };
  for (const detail of details) {
    for (const lb of detail.labels) counts[lb.curation] += 1;
  }
  return counts;
}
