/* tslint:disable */
/* eslint-disable */

/**
 * Learnable parameter counts of one configuration.
 */
export class Budget {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    audio: number;
    fusion: number;
    head: number;
    total: number;
    visual: number;
}

/**
 * One adaptive block evaluated on a synthetic `channels × size × size`
 * target map.
 */
export class GateView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Index of the heaviest channel at each location.
     */
    dominant(): Uint32Array;
    readonly channels: number;
    /**
     * `Σ_c |reinforced| / Σ_c |target|` at each location, `size × size`.
     */
    readonly gain: Float32Array;
    readonly size: number;
    /**
     * Channel softmax of the gate, `channels × size × size`.
     */
    readonly weights: Float32Array;
}

export function attentionWeights(seed: number, queries: number, keys: number, heads: number, sharpness: number): Float32Array;

export function gateView(seed: number, channels: number, size: number, coupling: number, residual: boolean): GateView;

export function paramBudget(preset: string, mode: string): Budget;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_budget_free: (a: number, b: number) => void;
    readonly __wbg_gateview_free: (a: number, b: number) => void;
    readonly __wbg_get_budget_audio: (a: number) => number;
    readonly __wbg_get_budget_fusion: (a: number) => number;
    readonly __wbg_get_budget_head: (a: number) => number;
    readonly __wbg_get_budget_total: (a: number) => number;
    readonly __wbg_get_budget_visual: (a: number) => number;
    readonly __wbg_set_budget_audio: (a: number, b: number) => void;
    readonly __wbg_set_budget_fusion: (a: number, b: number) => void;
    readonly __wbg_set_budget_head: (a: number, b: number) => void;
    readonly __wbg_set_budget_total: (a: number, b: number) => void;
    readonly __wbg_set_budget_visual: (a: number, b: number) => void;
    readonly attentionWeights: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly gateView: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly gateview_channels: (a: number) => number;
    readonly gateview_dominant: (a: number) => [number, number];
    readonly gateview_gain: (a: number) => [number, number];
    readonly gateview_size: (a: number) => number;
    readonly gateview_weights: (a: number) => [number, number];
    readonly paramBudget: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
