/* tslint:disable */
/* eslint-disable */

export class DemoGame {
    free(): void;
    [Symbol.dispose](): void;
    autoStep(): number;
    channelNames(): string[];
    click(item: number): void;
    colors(item: number): string[];
    display(): Uint32Array;
    iteration(): number;
    /**
     * `method` is `reweight`, `fixed_weight` or `late_fusion`.
     */
    constructor(items: number, channels: number, method_name: string, seed: number);
    /**
     * Posterior target probability of each displayed item.
     */
    probabilities(): Float64Array;
    status(): string;
    target(): number;
    weights(): Float64Array;
}

export function simulateGames(items: number, channels: number, method_name: string, games: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demogame_free: (a: number, b: number) => void;
    readonly demogame_autoStep: (a: number) => [number, number, number];
    readonly demogame_channelNames: (a: number) => [number, number];
    readonly demogame_click: (a: number, b: number) => [number, number];
    readonly demogame_colors: (a: number, b: number) => [number, number];
    readonly demogame_display: (a: number) => [number, number];
    readonly demogame_iteration: (a: number) => number;
    readonly demogame_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demogame_probabilities: (a: number) => [number, number];
    readonly demogame_status: (a: number) => [number, number];
    readonly demogame_target: (a: number) => number;
    readonly demogame_weights: (a: number) => [number, number];
    readonly simulateGames: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
