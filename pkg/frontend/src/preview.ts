// Recommendation preview state: pick a reference, slide K between 1 and 5,
// and show the server's ranked filtered variants exactly in response order.

import { Api, RecommendItem } from "./api.js";

export const MAX_PREVIEW = 5; // small-display constraint: at most 5 at once

export class PreviewSession {
  refIds: string[] = [];
  refId: string | null = null;
  k = MAX_PREVIEW;
  items: RecommendItem[] = [];
  error: string | null = null;

  constructor(
    private readonly api: Api,
    private readonly onChange: () => void = () => {},
  ) {}

  async loadRefs(): Promise<void> {
    try {
      const progress = await this.api.progress();
      this.refIds = progress.ref_ids;
      if (this.refId === null && this.refIds.length > 0) {
        this.refId = this.refIds[0];
      }
      this.error = null;
    } catch (e) {
      this.error = String(e);
    }
    this.onChange();
  }

  setK(k: number): void {
    this.k = Math.max(1, Math.min(MAX_PREVIEW, Math.round(k)));
    this.onChange();
  }

  setRef(refId: string): void {
    this.refId = refId;
    this.onChange();
  }

  async refresh(): Promise<void> {
    if (this.refId === null) return;
    try {
      const body = await this.api.recommend(this.refId, this.k);
      // order is the server's ranking; never re-sort client-side
      this.items = body.items;
      this.error = null;
    } catch (e) {
      this.items = [];
      this.error = /409/.test(String(e)) || /no model/.test(String(e))
        ? "no model loaded on the server"
        : String(e);
    }
    this.onChange();
  }
}
