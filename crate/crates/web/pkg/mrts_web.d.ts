/* tslint:disable */
/* eslint-disable */

export class Match {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Board snapshot as JSON.
     */
    board(): string;
    /**
     * Observation groups for a cell as seen by P1, plus the legal orders if
     * the cell holds one of P1's units.
     */
    inspect(row: number, col: number): string;
    /**
     * Swaps in the weights from a trainer checkpoint file.
     */
    loadCheckpoint(bytes: Uint8Array): void;
    /**
     * `p1` is a bot name or `model`; `p2` is a bot name.
     */
    constructor(map: string, p1: string, p2: string, seed: number);
    /**
     * Per-component probabilities the policy assigns to P1's unit at the
     * cell, after masking, plus the state value.
     */
    policyView(row: number, col: number): string;
    /**
     * Advances up to `ticks` ticks, stopping early at the end of the game.
     */
    step(ticks: number): void;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_match_free: (a: number, b: number) => void;
    readonly match_board: (a: number) => [number, number];
    readonly match_inspect: (a: number, b: number, c: number) => [number, number, number, number];
    readonly match_loadCheckpoint: (a: number, b: number, c: number) => [number, number];
    readonly match_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly match_policyView: (a: number, b: number, c: number) => [number, number, number, number];
    readonly match_step: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
