// Annotation console state: one HIT in flight, per-question verdicts, the
// arithmetic check, and the submit flow. The server stays authoritative for
// every validation; the client only prevents obviously incomplete posts and
// warns when a second "equal" is chosen.

import { Api, HitDto, SubmitResult, Verdict } from "./api.js";

export interface AnnotateCallbacks {
  onChange?: () => void;
}

export class AnnotationSession {
  hit: HitDto | null = null;
  answers: (Verdict | null)[] = [];
  mathAnswer: number | null = null;
  lastOutcome: SubmitResult | null = null;
  error: string | null = null;
  acceptedPairs = 0;
  private next: HitDto | null = null; // preloaded to keep latency low

  constructor(
    private readonly api: Api,
    readonly annotatorId: string = "webui",
    private readonly cb: AnnotateCallbacks = {},
  ) {}

  private changed() {
    this.cb.onChange?.();
  }

  async start(): Promise<void> {
    try {
      this.hit = await this.api.fetchHit();
      this.answers = new Array(this.hit.questions.length).fill(null);
      this.mathAnswer = null;
      this.error = null;
      this.preload();
    } catch (e) {
      this.error = String(e);
    }
    this.changed();
  }

  private preload(): void {
    this.api
      .fetchHit()
      .then((h) => (this.next = h))
      .catch(() => (this.next = null));
  }

  select(question: number, verdict: Verdict): void {
    if (!this.hit || question < 0 || question >= this.answers.length) return;
    this.answers[question] = verdict;
    this.changed();
  }

  setMathAnswer(value: number | null): void {
    this.mathAnswer = value;
    this.changed();
  }

  answeredCount(): number {
    return this.answers.filter((a) => a !== null).length;
  }

  equalCount(): number {
    return this.answers.filter((a) => a === "equal").length;
  }

  /** Submit stays disabled until every question has a verdict and the
   * arithmetic field is filled. */
  canSubmit(): boolean {
    return (
      this.hit !== null &&
      this.answeredCount() === this.answers.length &&
      this.mathAnswer !== null
    );
  }

  tooManyEquals(): boolean {
    return this.equalCount() > 1;
  }

  async submit(): Promise<SubmitResult | null> {
    if (!this.hit || !this.canSubmit()) return null;
    try {
      const result = await this.api.submit(
        this.hit.hit_id,
        this.answers,
        this.mathAnswer,
        this.annotatorId,
      );
      this.lastOutcome = result;
      if (result.status === "accepted") {
        this.acceptedPairs += 9;
      }
      await this.advance();
      return result;
    } catch (e) {
      // network trouble: keep the draft so nothing typed is lost
      this.error = String(e);
      this.changed();
      return null;
    }
  }

  private async advance(): Promise<void> {
    if (this.next) {
      this.hit = this.next;
      this.next = null;
      this.answers = new Array(this.hit.questions.length).fill(null);
      this.mathAnswer = null;
      this.error = null;
      this.preload();
      this.changed();
    } else {
      await this.start();
    }
  }

  /** Keyboard affordances: ArrowLeft / ArrowRight / e vote on a question. */
  keyboardVerdict(key: string): Verdict | null {
    switch (key) {
      case "ArrowLeft":
        return "left";
      case "ArrowRight":
        return "right";
      case "e":
        return "equal";
      case "x":
        return "error";
      default:
        return null;
    }
  }
}
