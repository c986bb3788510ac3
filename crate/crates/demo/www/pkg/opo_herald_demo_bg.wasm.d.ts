/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const absorption_line: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const coherence_time_ps: (a: number, b: number, c: number) => [number, number, number];
export const g1_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const rate_budget: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
