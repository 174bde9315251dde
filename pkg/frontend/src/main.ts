import { Api } from "./api.js";
import { AnnotationSession } from "./annotate.js";
import { PreviewSession } from "./preview.js";
import { renderAnnotation, renderPreview } from "./dom.js";

function bootstrap(): void {
  const api = new Api("");
  const annotateRoot = document.getElementById("annotate")!;
  const previewRoot = document.getElementById("preview")!;

  const annotation = new AnnotationSession(api, "webui", {
    onChange: () => renderAnnotation(annotateRoot, annotation),
  });
  const preview = new PreviewSession(api, () => renderPreview(previewRoot, preview));

  for (const tab of Array.from(document.querySelectorAll<HTMLButtonElement>("[data-tab]"))) {
    tab.addEventListener("click", () => {
      document.getElementById("annotate")!.hidden = tab.dataset.tab !== "annotate";
      document.getElementById("preview")!.hidden = tab.dataset.tab !== "preview";
      if (tab.dataset.tab === "preview") {
        void preview.loadRefs().then(() => preview.refresh());
      }
    });
  }

  void annotation.start();
}

document.addEventListener("DOMContentLoaded", bootstrap);
