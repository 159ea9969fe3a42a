/** Generation loop controller: validate, send, snapshot, pin, re-roll.
 *
 * Owns the single-flight policy (a click during an in-flight generation
 * replaces the queued request rather than stacking) and the append-only
 * history. DOM-free so the whole loop is unit-testable.
 */

import { ApiClient } from "./api.js";
import {
  ComposerState,
  appendSnapshot,
  buildRequest,
  nodeIndex,
  setPin,
  setSeed,
  validateGraph,
} from "./state.js";
import type { GenerateRequest, GenerateResponse, VocabResponse } from "./types.js";

export interface ControllerEvents {
  onState?(state: ComposerState): void;
  onResult?(response: GenerateResponse): void;
  onError?(message: string): void;
}

export class GenerationController {
  state: ComposerState;
  vocab: VocabResponse | null = null;

  private inFlight = false;
  private queued: GenerateRequest | null = null;

  constructor(
    initial: ComposerState,
    private readonly api: ApiClient,
    private readonly events: ControllerEvents = {},
  ) {
    this.state = initial;
  }

  async loadVocab(): Promise<VocabResponse> {
    this.vocab = await this.api.vocab();
    return this.vocab;
  }

  apply(result: { state: ComposerState; error?: string }): boolean {
    if (result.error) {
      this.events.onError?.(result.error);
      return false;
    }
    this.state = result.state;
    this.events.onState?.(this.state);
    return true;
  }

  /** Validate and generate for the current state; snapshots on success. */
  async generate(k: number | null = null): Promise<GenerateResponse | null> {
    const problems = validateGraph(this.state, this.vocab);
    if (problems.length > 0) {
      this.events.onError?.(problems.join("; "));
      return null;
    }
    return this.send(buildRequest(this.state, k));
  }

  /** Re-send a stored request verbatim (history reproducibility). */
  async resend(request: GenerateRequest): Promise<GenerateResponse | null> {
    return this.send(structuredClone(request));
  }

  private async send(request: GenerateRequest): Promise<GenerateResponse | null> {
    if (this.inFlight) {
      this.queued = request; // queue-replace: only the latest click survives
      return null;
    }
    this.inFlight = true;
    try {
      const response = await this.api.generate(request);
      this.state = appendSnapshot(this.state, request, response);
      this.events.onState?.(this.state);
      this.events.onResult?.(response);
      return response;
    } catch (err) {
      this.events.onError?.(err instanceof Error ? err.message : String(err));
      return null;
    } finally {
      this.inFlight = false;
      if (this.queued) {
        const next = this.queued;
        this.queued = null;
        void this.send(next);
      }
    }
  }

  /** Pin a candidate crop for a node and regenerate immediately. */
  async pinAndRegenerate(nodeId: number, cropId: string): Promise<GenerateResponse | null> {
    if (!this.apply(setPin(this.state, nodeId, cropId))) return null;
    return this.generate();
  }

  /** Bump the seed (fresh decoder noise / retrieval draw) and regenerate. */
  async reroll(): Promise<GenerateResponse | null> {
    if (!this.apply(setSeed(this.state, this.state.seed + 1))) return null;
    return this.generate();
  }

  /** Candidate crop ids for a node, from the most recent snapshot. */
  candidatesFor(nodeId: number): string[] {
    const last = this.state.history[this.state.history.length - 1];
    if (!last) return [];
    const idx = nodeIndex(this.state, nodeId);
    if (idx < 0 || idx >= last.response.candidates.length) return [];
    return last.response.candidates[idx];
  }
}
