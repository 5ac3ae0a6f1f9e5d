// Session history: every submitted request is recorded so it can be
// restored (mask + settings) and resubmitted for a pixel-identical result.

import { IntentField } from "./intentMask.js";

export interface HistoryEntry {
  maskValues: Int8Array;
  width: number;
  height: number;
  w: number;
  steps: number;
  seed: number;
  resultPngBytes: Uint8Array;
}

export class SessionHistory {
  private entries: HistoryEntry[] = [];

  add(field: IntentField, w: number, steps: number, seed: number, result: Uint8Array): number {
    this.entries.push({
      maskValues: Int8Array.from(field.values),
      width: field.width,
      height: field.height,
      w,
      steps,
      seed,
      resultPngBytes: result,
    });
    return this.entries.length - 1;
  }

  get(index: number): HistoryEntry {
    const entry = this.entries[index];
    if (!entry) throw new Error(`no history entry ${index}`);
    return entry;
  }

  restoreField(index: number): IntentField {
    const entry = this.get(index);
    return new IntentField(entry.width, entry.height, entry.maskValues);
  }

  get length(): number {
    return this.entries.length;
  }
}
