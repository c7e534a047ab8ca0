/**
 * View state: the server-owned query document, the pivot layout (which
 * group-by axes render as rows vs columns), the active slicers, and the
 * selected complex-fact assembly. The whole state round-trips through the
 * URL fragment so an analysis is shareable as a link.
 */

import type { CubeQueryDoc, FilterDoc } from './types.js'

export interface PivotLayout {
  /** indices into query.group_by rendered as row headers */
  rows: number[]
  /** indices into query.group_by rendered as column headers */
  columns: number[]
}

export interface ViewState {
  query: CubeQueryDoc
  layout: PivotLayout
  slicers: FilterDoc[]
  assemblyId: number | null
}

export function initialState(query: CubeQueryDoc): ViewState {
  const rows = query.group_by.map((_, i) => i)
  const columns = rows.length > 1 ? [rows.pop() as number] : []
  return { query, layout: { rows, columns }, slicers: [], assemblyId: null }
}

function toBase64Url(text: string): string {
  const bytes = new TextEncoder().encode(text)
  let binary = ''
  for (const b of bytes) binary += String.fromCharCode(b)
  return btoa(binary).replace(/\+/g, '-').replace(/\//g, '_').replace(/=+$/, '')
}

function fromBase64Url(encoded: string): string {
  const padded = encoded.replace(/-/g, '+').replace(/_/g, '/').padEnd(Math.ceil(encoded.length / 4) * 4, '=')
  const binary = atob(padded)
  const bytes = Uint8Array.from(binary, (c) => c.charCodeAt(0))
  return new TextDecoder().decode(bytes)
}

/** Encode the state into a URL fragment (leading '#'). */
export function encodeViewState(state: ViewState): string {
  return '#' + toBase64Url(JSON.stringify(state))
}

/** Decode a URL fragment back into a state; null for absent/garbled input. */
export function decodeViewState(fragment: string): ViewState | null {
  const raw = fragment.startsWith('#') ? fragment.slice(1) : fragment
  if (!raw) return null
  try {
    const parsed = JSON.parse(fromBase64Url(raw)) as ViewState
    if (!parsed.query || !parsed.layout) return null
    return parsed
  } catch {
    return null
  }
}
