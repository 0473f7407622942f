/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_budget_free: (a: number, b: number) => void;
export const __wbg_gateview_free: (a: number, b: number) => void;
export const __wbg_get_budget_audio: (a: number) => number;
export const __wbg_get_budget_fusion: (a: number) => number;
export const __wbg_get_budget_head: (a: number) => number;
export const __wbg_get_budget_total: (a: number) => number;
export const __wbg_get_budget_visual: (a: number) => number;
export const __wbg_set_budget_audio: (a: number, b: number) => void;
export const __wbg_set_budget_fusion: (a: number, b: number) => void;
export const __wbg_set_budget_head: (a: number, b: number) => void;
export const __wbg_set_budget_total: (a: number, b: number) => void;
export const __wbg_set_budget_visual: (a: number, b: number) => void;
export const attentionWeights: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const gateView: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const gateview_channels: (a: number) => number;
export const gateview_dominant: (a: number) => [number, number];
export const gateview_gain: (a: number) => [number, number];
export const gateview_size: (a: number) => number;
export const gateview_weights: (a: number) => [number, number];
export const paramBudget: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
