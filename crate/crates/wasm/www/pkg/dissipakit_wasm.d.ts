/* tslint:disable */
/* eslint-disable */

/**
 * `β(α)` on a logarithmic grid over `[alpha_lo, alpha_hi]`; points where
 * the gain conditions cannot hold are `null`.
 */
export function beta_curve(certificate_json: string, alpha_lo: number, alpha_hi: number, points: number): string;

/**
 * Learns a quadratic certificate for `x⁺ = a x + b u`, `y = x` from `m`
 * simulated trajectories and checks it on a quarter of them held out.
 */
export function learn_scalar(a: number, b: number, lambda: number, sigma_u: number, seed: bigint): string;

/**
 * Distillation column response, in deviation variables, to a held
 * Gaussian reflux excitation.
 */
export function simulate_column(sigma_u: number, hold_steps: number, horizon: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly beta_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly learn_scalar: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly simulate_column: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
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
