/**
 * Page wiring: example gallery, upload, query form, threshold slider, and
 * the canvas overlay. All rendering is driven by store subscriptions; the
 * only network calls are the gallery load and explicit query submissions.
 */
import { ApiClient, ExampleEntry } from "./api.js";
import { canSubmit, Store, visibleDetections } from "./state.js";
import { drawOverlay, hitTest } from "./overlay.js";

const DISPLAY_SIZE = 384;
const PAGE_SIZE = 24;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const api = new ApiClient("");
  const store = new Store(api);

  const banner = el<HTMLDivElement>("banner");
  const bannerText = el<HTMLSpanElement>("banner-text");
  const bannerRetry = el<HTMLButtonElement>("banner-retry");
  const gallery = el<HTMLDivElement>("gallery");
  const pagePrev = el<HTMLButtonElement>("page-prev");
  const pageNext = el<HTMLButtonElement>("page-next");
  const pageLabel = el<HTMLSpanElement>("page-label");
  const upload = el<HTMLInputElement>("upload");
  const queryInput = el<HTMLInputElement>("query");
  const submit = el<HTMLButtonElement>("submit");
  const threshold = el<HTMLInputElement>("threshold");
  const thresholdValue = el<HTMLSpanElement>("threshold-value");
  const topK = el<HTMLInputElement>("topk");
  const scene = el<HTMLImageElement>("scene");
  const boxes = el<HTMLCanvasElement>("boxes");
  const status = el<HTMLDivElement>("status");
  const noMatches = el<HTMLDivElement>("no-matches");

  boxes.width = DISPLAY_SIZE;
  boxes.height = DISPLAY_SIZE;
  const ctx = boxes.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");

  let examples: ExampleEntry[] = [];
  let page = 0;

  function showBanner(message: string, retryable: boolean): void {
    banner.hidden = false;
    bannerText.textContent = message;
    bannerRetry.hidden = !retryable;
  }

  function hideBanner(): void {
    banner.hidden = true;
  }

  function selectImage(selection: Parameters<typeof store.update>[0]["image"]): void {
    // the stored response belongs to the previous image; drop it so the
    // overlay never shows boxes from another scene
    store.update({ image: selection ?? null, response: null, error: null });
  }

  function renderGallery(): void {
    const pages = Math.max(1, Math.ceil(examples.length / PAGE_SIZE));
    page = Math.min(page, pages - 1);
    pageLabel.textContent = `${page + 1} / ${pages}`;
    pagePrev.disabled = page === 0;
    pageNext.disabled = page >= pages - 1;
    gallery.replaceChildren();
    if (examples.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty";
      empty.textContent = "no examples available";
      gallery.append(empty);
      return;
    }
    const selected = store.get().image;
    for (const entry of examples.slice(page * PAGE_SIZE, (page + 1) * PAGE_SIZE)) {
      const card = document.createElement("figure");
      card.className = "card";
      if (selected?.kind === "example" && selected.id === entry.id) {
        card.classList.add("selected");
      }
      const img = document.createElement("img");
      img.src = api.exampleImageUrl(entry.id);
      img.alt = `example ${entry.id}`;
      const caption = document.createElement("figcaption");
      caption.textContent = entry.query;
      card.append(img, caption);
      card.addEventListener("click", () => {
        selectImage({ kind: "example", id: entry.id });
        scene.src = api.exampleImageUrl(entry.id);
        if (queryInput.value.trim() === "") {
          queryInput.value = entry.query;
          store.update({ query: entry.query });
        }
        renderGallery();
      });
      gallery.append(card);
    }
  }

  async function loadGallery(): Promise<void> {
    try {
      examples = await api.examples();
      hideBanner();
      renderGallery();
    } catch (e) {
      showBanner(e instanceof Error ? e.message : String(e), true);
    }
  }

  upload.addEventListener("change", () => {
    const file = upload.files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      const dataUrl = reader.result as string;
      const base64 = dataUrl.split(",", 2)[1] ?? "";
      selectImage({ kind: "upload", name: file.name, base64 });
      scene.src = dataUrl;
      renderGallery();
    };
    reader.readAsDataURL(file);
  });

  queryInput.addEventListener("input", () => {
    store.update({ query: queryInput.value });
  });

  threshold.addEventListener("input", () => {
    // client-side re-filter only; no request is issued
    store.setThreshold(Number(threshold.value));
  });

  topK.addEventListener("change", () => {
    const value = Math.max(1, Math.floor(Number(topK.value) || 1));
    topK.value = String(value);
    store.update({ topK: value });
  });

  submit.addEventListener("click", () => {
    void store.submit();
  });
  bannerRetry.addEventListener("click", () => {
    void loadGallery();
  });
  pagePrev.addEventListener("click", () => {
    page -= 1;
    renderGallery();
  });
  pageNext.addEventListener("click", () => {
    page += 1;
    renderGallery();
  });

  boxes.addEventListener("mousemove", (ev) => {
    const state = store.get();
    if (!state.response) {
      boxes.title = "";
      return;
    }
    const rect = boxes.getBoundingClientRect();
    const hit = hitTest(
      visibleDetections(state),
      state.response.image_size,
      DISPLAY_SIZE,
      ev.clientX - rect.left,
      ev.clientY - rect.top,
    );
    boxes.title = hit
      ? `score ${hit.score.toFixed(3)} (confidence ${hit.confidence.toFixed(3)}, ` +
        `alignment ${hit.alignment.toFixed(3)})`
      : "";
  });

  store.subscribe((state) => {
    submit.disabled = !canSubmit(state);
    thresholdValue.textContent = state.threshold.toFixed(2);
    if (state.error !== null) {
      showBanner(state.error, false);
    }
    const visible = visibleDetections(state);
    const imageSize = state.response?.image_size ?? DISPLAY_SIZE;
    drawOverlay(ctx, visible, imageSize, DISPLAY_SIZE);
    noMatches.hidden = !(state.response && visible.length === 0);
    if (state.inFlight) {
      status.textContent = "querying...";
    } else if (state.response) {
      status.textContent =
        `${visible.length} of ${state.response.detections.length} detections ` +
        `above threshold | ${state.response.timing_ms.toFixed(1)} ms`;
    } else {
      status.textContent = "pick an image and type a query";
    }
  });

  store.update({});
  void loadGallery();
}

document.addEventListener("DOMContentLoaded", main);
