/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demogame_free: (a: number, b: number) => void;
export const demogame_autoStep: (a: number) => [number, number, number];
export const demogame_channelNames: (a: number) => [number, number];
export const demogame_click: (a: number, b: number) => [number, number];
export const demogame_colors: (a: number, b: number) => [number, number];
export const demogame_display: (a: number) => [number, number];
export const demogame_iteration: (a: number) => number;
export const demogame_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demogame_probabilities: (a: number) => [number, number];
export const demogame_status: (a: number) => [number, number];
export const demogame_target: (a: number) => number;
export const demogame_weights: (a: number) => [number, number];
export const simulateGames: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
