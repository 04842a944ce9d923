// Payload shapes of the curation API (mirrors the server's response models).

export type Verdict = 'approved' | 'rejected';
export type Curation = 'pending' | Verdict;

export interface BundleSummary {
  bundle_id: string;
  modalities: string[];
  pending: number;
  approved: number;
  rejected: number;
}

export interface BundlePage {
  bundles: BundleSummary[];
  total: number;
  page: number;
  size: number;
}

export interface FramePayload {
  modality: string;
  width: number;
  height: number;
  split: string;
  image_url: string | null;
}

export interface LabelPayload {
  modality: string;
  index: number;
  polygon: number[][];
  curation: Curation;
  confidence: number;
  provenance: string;
  mask_id: string | null;
  set_id: string | null;
}

export interface BundleDetail {
  bundle_id: string;
  revision: number;
  frames: FramePayload[];
  labels: LabelPayload[];
}

export interface Progress {
  pending: number;
  approved: number;
  rejected: number;
}
