/** Wire types mirroring the dedup-al service JSON payloads. */

export type RunStatus =
  | "idle"
  | "training"
  | "scoring"
  | "awaiting_labels"
  | "done"
  | "error";

export interface RoundReport {
  round_index: number;
  strategy: string;
  precision: number | null;
  recall: number | null;
  f1: number | null;
  zero_division: string[];
  selected: string[];
  labeled_count: number;
  unlabeled_count: number;
  threshold: number;
}

export interface StatusSnapshot {
  run_id: string;
  status: RunStatus;
  round_index: number;
  rounds_total: number;
  pending_count: number;
  config_digest: string;
  labeled_count: number;
  error: string | null;
  latest_report: RoundReport | null;
}

export interface QueueItem {
  pair_id: string;
  left_id: string;
  right_id: string;
  left: Record<string, string>;
  right: Record<string, string>;
  p: number;
  requested_at: string;
}

export interface SubmitOutcome {
  results: { pair_id: string; accepted: boolean; reason: string | null }[];
  remaining: number;
}

export interface ExportPayload {
  threshold: number;
  pairs: {
    pair_id: string;
    left_id: string;
    right_id: string;
    p: number;
    duplicate: boolean;
  }[];
  clusters: Record<string, string>;
}
