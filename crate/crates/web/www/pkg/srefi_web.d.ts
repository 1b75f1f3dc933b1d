/* tslint:disable */
/* eslint-disable */

export function blendPixels(a: number, b: number, side: number, seam: number, levels: number): Uint8Array;

export function facePixels(seed: number, side: number): Uint8Array;

export function meshSvg(seed: number, side: number, show_initial: boolean): string;

export function synthesizePixels(seed: number, side: number, donors: number, c_donor: number, levels: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly blendPixels: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly facePixels: (a: number, b: number) => [number, number, number, number];
    readonly meshSvg: (a: number, b: number, c: number) => [number, number, number, number];
    readonly synthesizePixels: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
