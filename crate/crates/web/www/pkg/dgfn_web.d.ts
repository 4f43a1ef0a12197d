/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `view` is one of `target`, `gfn`, `dgfn`, `dgfn-sampler`.
     */
    heatmap(view: string): Float64Array;
    modes_total(): number;
    constructor(side: number, r0: number, seed: number);
    /**
     * `[gfn, dgfn]` exact L1 of the online networks.
     */
    oracle_l1(): Float64Array;
    side(): number;
    step(n: number): void;
    steps(): number;
    /**
     * Trace column for trainer 0 (GFN) or 1 (DGFN): `trajectories`, `modes` or `loss`.
     */
    trace(which: number, column: string): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_heatmap: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_modes_total: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_oracle_l1: (a: number) => [number, number, number, number];
    readonly demo_side: (a: number) => number;
    readonly demo_step: (a: number, b: number) => [number, number];
    readonly demo_steps: (a: number) => number;
    readonly demo_trace: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
