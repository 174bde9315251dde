// Typed client for the annotation service. The UI consumes exactly these
// five endpoints and never computes labels, scores or rankings itself.

export type Verdict = "left" | "right" | "equal" | "error";

export interface QuestionDto {
  index: number;
  ref_id: string;
  left: { filtered_id: string; url: string };
  right: { filtered_id: string; url: string };
}

export interface HitDto {
  hit_id: string;
  questions: QuestionDto[];
  math: { a: number; b: number };
}

export interface SubmitResult {
  status: "accepted" | "rejected";
  reasons: string[];
}

export interface ProgressDto {
  pending: number;
  checked_out: number;
  accepted_labels: number;
  rejected_hits: number;
  total_pairs: number;
  ref_ids: string[];
}

export interface RecommendItem {
  filter: string;
  score: number;
  filtered_id: string;
  url: string;
}

export interface RecommendDto {
  ref_id: string;
  k: number;
  items: RecommendItem[];
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class Api {
  constructor(private readonly base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) {
      const body = await res.text();
      throw new ApiError(body || res.statusText, res.status);
    }
    return (await res.json()) as T;
  }

  fetchHit(): Promise<HitDto> {
    return this.get<HitDto>("/api/hit");
  }

  progress(): Promise<ProgressDto> {
    return this.get<ProgressDto>("/api/progress");
  }

  recommend(refId: string, k: number): Promise<RecommendDto> {
    return this.get<RecommendDto>(
      `/api/recommend?ref=${encodeURIComponent(refId)}&k=${k}`,
    );
  }

  imageUrl(filteredId: string): string {
    return `${this.base}/api/image/${filteredId}`;
  }

  async submit(
    hitId: string,
    answers: (Verdict | null)[],
    mathAnswer: number | null,
    annotatorId: string,
  ): Promise<SubmitResult> {
    const res = await fetch(`${this.base}/api/hit/${hitId}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        answers,
        math_answer: mathAnswer,
        annotator_id: annotatorId,
      }),
    });
    if (!res.ok) {
      const body = await res.text();
      throw new ApiError(body || res.statusText, res.status);
    }
    return (await res.json()) as SubmitResult;
  }
}
