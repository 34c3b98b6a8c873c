/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const kmeans_compare: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number];
export const quartic_landscape: (a: number, b: number, c: number) => [number, number];
export const quartic_race: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const schedule_table: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
