/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_match_free: (a: number, b: number) => void;
export const match_board: (a: number) => [number, number];
export const match_inspect: (a: number, b: number, c: number) => [number, number, number, number];
export const match_loadCheckpoint: (a: number, b: number, c: number) => [number, number];
export const match_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const match_policyView: (a: number, b: number, c: number) => [number, number, number, number];
export const match_step: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
