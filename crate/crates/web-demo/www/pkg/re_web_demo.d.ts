/* tslint:disable */
/* eslint-disable */

/**
 * Lloyd against RE k-means from the same random centroids on 2-D blobs.
 */
export function kmeans_compare(n: number, k: number, separation: number, balance: number, mu0: number, steps: number, data_seed: number, init_seed: number): string;

/**
 * Energy landscape of `1/2 ((y1 - t^2)^2 + (y2 - t)^2)` with its local
 * minima, their RE constants and the expanded curves at `alpha`.
 */
export function quartic_landscape(y1: number, y2: number, alpha: number): string;

/**
 * Gauss-Newton descent from `theta0` with and without residual expansion.
 */
export function quartic_race(y1: number, y2: number, theta0: number, mu0: number, steps: number): string;

/**
 * Penalty ramp with the expansion constants of every step.
 */
export function schedule_table(mu0: number, steps: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly kmeans_compare: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number];
    readonly quartic_landscape: (a: number, b: number, c: number) => [number, number];
    readonly quartic_race: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly schedule_table: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
