// DOM rendering for the annotation console and the preview gallery.
// All state lives in the session objects; this layer only projects it.

import { AnnotationSession } from "./annotate.js";
import { PreviewSession, MAX_PREVIEW } from "./preview.js";
import { Verdict } from "./api.js";

const VERDICTS: { value: Verdict; label: string }[] = [
  { value: "left", label: "Left" },
  { value: "right", label: "Right" },
  { value: "equal", label: "Equal" },
  { value: "error", label: "Error" },
];

export function renderAnnotation(root: HTMLElement, session: AnnotationSession): void {
  root.innerHTML = "";
  if (session.error) {
    const banner = document.createElement("div");
    banner.className = "banner error";
    banner.textContent = `service unreachable: ${session.error}`;
    const retry = document.createElement("button");
    retry.textContent = "Retry";
    retry.addEventListener("click", () => void session.start());
    banner.appendChild(retry);
    root.appendChild(banner);
    return;
  }
  const hit = session.hit;
  if (!hit) {
    root.textContent = "Loading questions...";
    return;
  }

  const progress = document.createElement("div");
  progress.className = "progress";
  progress.dataset.testid = "progress";
  progress.textContent =
    `${session.answeredCount()} / ${hit.questions.length} answered - ` +
    `${session.acceptedPairs} pairs contributed`;
  root.appendChild(progress);

  if (session.lastOutcome && session.lastOutcome.status === "rejected") {
    const note = document.createElement("div");
    note.className = "banner rejected";
    note.dataset.testid = "rejection";
    note.textContent = `submission rejected: ${session.lastOutcome.reasons.join(", ")}`;
    root.appendChild(note);
  }

  hit.questions.forEach((q, i) => {
    const row = document.createElement("div");
    row.className = "question";
    row.dataset.question = String(i);
    row.tabIndex = 0;

    for (const side of ["left", "right"] as const) {
      const img = document.createElement("img");
      img.src = q[side].url;
      img.alt = `${side} variant for ${q.ref_id}`;
      img.className = side;
      row.appendChild(img);
    }

    const options = document.createElement("div");
    options.className = "options";
    for (const v of VERDICTS) {
      const label = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `q${i}`;
      radio.value = v.value;
      radio.checked = session.answers[i] === v.value;
      radio.addEventListener("change", () => session.select(i, v.value));
      label.appendChild(radio);
      label.appendChild(document.createTextNode(v.label));
      options.appendChild(label);
    }
    row.appendChild(options);

    row.addEventListener("keydown", (ev) => {
      const verdict = session.keyboardVerdict(ev.key);
      if (verdict) {
        session.select(i, verdict);
        ev.preventDefault();
      }
    });
    root.appendChild(row);
  });

  if (session.tooManyEquals()) {
    const warn = document.createElement("div");
    warn.className = "banner warn";
    warn.dataset.testid = "equal-warning";
    warn.textContent =
      "more than one Equal will be rejected by the server";
    root.appendChild(warn);
  }

  const mathRow = document.createElement("div");
  mathRow.className = "math";
  const mathLabel = document.createElement("label");
  mathLabel.textContent = `Verification: ${hit.math.a} + ${hit.math.b} = `;
  const mathInput = document.createElement("input");
  mathInput.type = "number";
  mathInput.dataset.testid = "math";
  mathInput.value = session.mathAnswer === null ? "" : String(session.mathAnswer);
  mathInput.addEventListener("input", () => {
    const v = mathInput.value.trim();
    session.setMathAnswer(v === "" ? null : Number(v));
  });
  mathLabel.appendChild(mathInput);
  mathRow.appendChild(mathLabel);
  root.appendChild(mathRow);

  const submit = document.createElement("button");
  submit.dataset.testid = "submit";
  submit.textContent = "Submit answers";
  submit.disabled = !session.canSubmit();
  submit.addEventListener("click", () => void session.submit());
  root.appendChild(submit);
}

export function renderPreview(root: HTMLElement, session: PreviewSession): void {
  root.innerHTML = "";
  const controls = document.createElement("div");
  controls.className = "controls";

  const select = document.createElement("select");
  select.dataset.testid = "ref-select";
  for (const rid of session.refIds) {
    const opt = document.createElement("option");
    opt.value = rid;
    opt.textContent = rid;
    opt.selected = rid === session.refId;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => {
    session.setRef(select.value);
    void session.refresh();
  });
  controls.appendChild(select);

  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "1";
  slider.max = String(MAX_PREVIEW);
  slider.value = String(session.k);
  slider.dataset.testid = "k-slider";
  slider.addEventListener("input", () => {
    session.setK(Number(slider.value));
    void session.refresh();
  });
  controls.appendChild(slider);

  const kLabel = document.createElement("span");
  kLabel.textContent = `top ${session.k}`;
  controls.appendChild(kLabel);
  root.appendChild(controls);

  if (session.error) {
    const banner = document.createElement("div");
    banner.className = "banner error";
    banner.dataset.testid = "preview-error";
    banner.textContent = session.error;
    root.appendChild(banner);
    return;
  }

  const grid = document.createElement("div");
  grid.className = "grid";
  grid.dataset.testid = "preview-grid";
  session.items.forEach((item, rank) => {
    const card = document.createElement("figure");
    card.className = "card";
    card.dataset.rank = String(rank);
    card.dataset.filter = item.filter;
    const img = document.createElement("img");
    img.src = item.url;
    img.alt = `${item.filter} preview`;
    const cap = document.createElement("figcaption");
    cap.textContent = `#${rank + 1} ${item.filter} (${item.score.toFixed(3)})`;
    card.appendChild(img);
    card.appendChild(cap);
    grid.appendChild(card);
  });
  root.appendChild(grid);
}
