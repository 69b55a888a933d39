/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const diffusion_json: (a: number, b: number, c: number, d: number) => [number, number];
export const posterior_json: (a: number, b: number) => [number, number];
export const predictive_risk_json: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
