/* tslint:disable */
/* eslint-disable */

/**
 * Both protocol timelines for homogeneous clients, as JSON.
 */
export function compareProtocols(t_gm_epoch: number, t_pm_epoch: number, t_up: number, t_down: number, t_agg: number, epochs_g: number, epochs_p: number, n_clients: number, rounds: number): string;

/**
 * Spectrum of a freshly initialized MLP, as JSON.
 */
export function initSpectrum(layer_sizes: Uint32Array, seed: number, tau: number): string;

/**
 * Per-client label histograms of a Dirichlet split, as JSON.
 */
export function partitionHistograms(n_samples: number, num_classes: number, n_clients: number, alpha: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compareProtocols: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly initSpectrum: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly partitionHistograms: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
