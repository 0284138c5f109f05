// DOM wiring for the annotation page. All behavior lives in AnnotationSession;
// this file only renders state and forwards events.

import {
  BEHAVIORAL_OPTIONS,
  Definitions,
  EMOTIONAL_OPTIONS,
  HttpTransport,
  LabelOption,
} from "./api.js";
import { AnnotationSession, SessionState } from "./session.js";

function element<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

const loginSection = element<HTMLElement>("login");
const taskSection = element<HTMLElement>("task");
const doneSection = element<HTMLElement>("done");
const annotatorInput = element<HTMLInputElement>("annotator");
const tokenInput = element<HTMLInputElement>("token");
const startButton = element<HTMLButtonElement>("start");
const progressText = element<HTMLElement>("progress");
const sampleImage = element<HTMLImageElement>("sample-image");
const imageRetry = element<HTMLButtonElement>("image-retry");
const behavioralGroup = element<HTMLElement>("behavioral-options");
const emotionalGroup = element<HTMLElement>("emotional-options");
const definitionsPanel = element<HTMLElement>("definitions-body");
const submitButton = element<HTMLButtonElement>("submit");
const errorBanner = element<HTMLElement>("error");
const errorText = element<HTMLElement>("error-text");
const retryButton = element<HTMLButtonElement>("retry");
const doneText = element<HTMLElement>("done-text");

let session: AnnotationSession | null = null;

function renderOptions(
  container: HTMLElement,
  name: string,
  options: readonly LabelOption[],
  onPick: (value: string) => void,
): void {
  container.replaceChildren();
  options.forEach((option, index) => {
    const label = document.createElement("label");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = name;
    radio.value = option.value;
    radio.addEventListener("change", () => onPick(option.value));
    const key = document.createElement("kbd");
    key.textContent = String(index + 1);
    label.append(radio, ` ${option.label} `, key);
    container.append(label);
  });
}

function renderDefinitions(definitions: Definitions): void {
  definitionsPanel.replaceChildren();
  const groups: Array<[string, Record<string, string>, readonly LabelOption[]]> = [
    ["Behavioral", definitions.behavioral, BEHAVIORAL_OPTIONS],
    ["Emotional", definitions.emotional, EMOTIONAL_OPTIONS],
  ];
  for (const [title, texts, options] of groups) {
    const heading = document.createElement("h3");
    heading.textContent = title;
    definitionsPanel.append(heading);
    const list = document.createElement("dl");
    for (const option of options) {
      const term = document.createElement("dt");
      term.textContent = option.label;
      const text = document.createElement("dd");
      text.textContent = texts[option.value] ?? "";
      list.append(term, text);
    }
    definitionsPanel.append(list);
  }
  const note = document.createElement("p");
  note.textContent = definitions.combination;
  definitionsPanel.append(note);
}

function syncRadios(container: HTMLElement, selected: string | null): void {
  for (const radio of container.querySelectorAll<HTMLInputElement>("input")) {
    radio.checked = radio.value === selected;
  }
}

function render(state: SessionState): void {
  loginSection.hidden = state.phase !== "idle";
  taskSection.hidden = state.phase !== "annotating";
  doneSection.hidden = state.phase !== "done";
  startButton.disabled = state.phase === "loading";
  errorBanner.hidden = state.error === null;
  errorText.textContent = state.error ?? "";

  if (state.phase === "annotating" && state.current) {
    progressText.textContent = `${state.labeled} / ${state.total} labeled`;
    if (!sampleImage.src.endsWith(state.current.image_url)) {
      imageRetry.hidden = true;
      sampleImage.src = state.current.image_url;
    }
    syncRadios(behavioralGroup, state.behavioral);
    syncRadios(emotionalGroup, state.emotional);
    submitButton.disabled = !(session && session.canSubmit());
  }
  if (state.phase === "done") {
    doneText.textContent = `All samples labeled. You submitted ${state.labeled} labels.`;
  }
}

async function begin(): Promise<void> {
  const annotator = annotatorInput.value.trim();
  if (!annotator) {
    annotatorInput.focus();
    return;
  }
  const token = tokenInput.value.trim() || null;
  const transport = new HttpTransport("", token);
  session = new AnnotationSession(transport, annotator);
  session.subscribe(render);

  renderOptions(behavioralGroup, "behavioral", BEHAVIORAL_OPTIONS, (value) =>
    session?.selectBehavioral(value),
  );
  renderOptions(emotionalGroup, "emotional", EMOTIONAL_OPTIONS, (value) =>
    session?.selectEmotional(value),
  );
  try {
    renderDefinitions(await transport.definitions());
  } catch {
    // definitions are a convenience; the radios still carry the labels
  }
  await session.start();
}

startButton.addEventListener("click", () => void begin());
annotatorInput.addEventListener("keydown", (event) => {
  if (event.key === "Enter") void begin();
});
submitButton.addEventListener("click", () => void session?.submitAndAdvance());
retryButton.addEventListener("click", () => void session?.retry());
sampleImage.addEventListener("error", () => {
  imageRetry.hidden = false;
});
imageRetry.addEventListener("click", () => {
  imageRetry.hidden = true;
  const source = sampleImage.src;
  sampleImage.src = "";
  sampleImage.src = source;
});

document.addEventListener("keydown", (event) => {
  if (!session || taskSection.hidden) return;
  if (event.target instanceof HTMLInputElement && event.target.type === "text") return;
  const digit = Number(event.key);
  if (digit >= 1 && digit <= 4) {
    session.applyDigit(digit);
  } else if (event.key === "Enter") {
    void session.submitAndAdvance();
  }
});
