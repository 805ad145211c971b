/* tslint:disable */
/* eslint-disable */

/**
 * Per-level anchor counts for an image and the anchors of its center cell.
 */
export function anchor_layout(width: number, height: number, variant: string): string;

/**
 * Hard and linear soft suppression of the same scene at threshold `nt`,
 * each with its kept detections and AP / AP50.
 */
export function compare_suppression(seed: number, crowding: number, sigma: number, nt: number): string;

/**
 * A seeded crowded scene and its raw detections.
 */
export function crowded_scene(seed: number, crowding: number, sigma: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly anchor_layout: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly compare_suppression: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly crowded_scene: (a: number, b: number, c: number) => [number, number, number, number];
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
