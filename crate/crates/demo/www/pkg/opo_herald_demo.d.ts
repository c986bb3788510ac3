/* tslint:disable */
/* eslint-disable */

/**
 * Relative absorption probability on `n_points` detunings across
 * `±span_mhz`.
 */
export function absorption_line(natural_fwhm_mhz: number, mode_fwhm_mhz: number, jitter_fwhm_mhz: number, span_mhz: number, n_points: number): Float64Array;

/**
 * Zero-delay coherence time, ps.
 */
export function coherence_time_ps(round_trip_ps: number, mode_fwhm_mhz: number, envelope_fwhm_ghz: number): number;

/**
 * |g¹| on `n_points` delays from 0 to `max_delay_ps`.
 */
export function g1_curve(round_trip_ps: number, mode_fwhm_mhz: number, envelope_fwhm_ghz: number, max_delay_ps: number, n_points: number): Float64Array;

/**
 * Budget report for measured rates with the reference efficiency chain.
 */
export function rate_budget(r1: number, r2: number, c: number, r_abs: number, pump_mw: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly absorption_line: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly coherence_time_ps: (a: number, b: number, c: number) => [number, number, number];
    readonly g1_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly rate_budget: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
