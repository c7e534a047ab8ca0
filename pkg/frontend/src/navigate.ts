/**
 * Navigation gestures. Every gesture that changes the analysis issues
 * exactly one POST /navigate followed by one POST /query; the new view state
 * carries the server-transformed query verbatim. The client never steps
 * levels or edits filters itself; applicability checks use the fact table's
 * server-provided navigation paths.
 */

import type { ViewState } from './state.js'
import type { Transport } from './transport.js'
import type { CubeResultDoc, FilterDoc, NavigateRequest } from './types.js'

export type Gesture =
  | { kind: 'drill'; dimension: string; level: string; value: string }
  | { kind: 'rollUp'; dimension: string }
  | { kind: 'setSlicer'; filter: FilterDoc }
  | { kind: 'clearSlicer'; filter: FilterDoc }

/** Per-fact navigation metadata, fetched once from GET /facts/{t}/navigation. */
export interface NavigationPaths {
  paths: Record<string, string[]>
}

export class GestureNotApplicable extends Error {}

function currentLevel(state: ViewState, dimension: string): string | null {
  const entry = state.query.group_by.find((g) => g.dimension === dimension)
  return entry ? entry.level : null
}

/** Drill is disabled at the grain level, roll-up at the coarsest level. */
export function gestureEnabled(
  state: ViewState,
  nav: NavigationPaths,
  gesture: Gesture,
): boolean {
  if (gesture.kind === 'setSlicer' || gesture.kind === 'clearSlicer') return true
  const level = currentLevel(state, gesture.dimension)
  if (level === null) return false
  const path = nav.paths[gesture.dimension]
  if (!path) return false
  const at = path.indexOf(level)
  if (at < 0) return false
  return gesture.kind === 'drill' ? at > 0 : at < path.length - 1
}

function requestFor(state: ViewState, gesture: Gesture): NavigateRequest {
  switch (gesture.kind) {
    case 'drill':
      return {
        query: state.query,
        op: 'drill_down',
        args: {
          dimension: gesture.dimension,
          slice_level: gesture.level,
          slice_value: gesture.value,
        },
      }
    case 'rollUp':
      return { query: state.query, op: 'roll_up', args: { dimension: gesture.dimension } }
    case 'setSlicer':
      return {
        query: state.query,
        op: 'slice',
        args: {
          dimension: gesture.filter.dimension,
          level: gesture.filter.level,
          value: gesture.filter.value,
        },
      }
    case 'clearSlicer':
      return { query: state.query, op: 'dice', args: { remove: [gesture.filter] } }
  }
}

function sameFilter(a: FilterDoc, b: FilterDoc): boolean {
  return (
    a.dimension === b.dimension &&
    a.level === b.level &&
    a.op === b.op &&
    JSON.stringify(a.value) === JSON.stringify(b.value)
  )
}

export interface GestureOutcome {
  state: ViewState
  result: CubeResultDoc
}

/**
 * Run a gesture: one /navigate, one /query, new state. Disabled gestures
 * throw without touching the transport.
 */
export async function applyGesture(
  state: ViewState,
  gesture: Gesture,
  transport: Transport,
  nav: NavigationPaths,
  signal?: AbortSignal,
): Promise<GestureOutcome> {
  if (!gestureEnabled(state, nav, gesture)) {
    throw new GestureNotApplicable(`${gesture.kind} is not applicable here`)
  }
  const { query } = await transport.navigate(requestFor(state, gesture), signal)
  const result = await transport.query(query, signal)

  let slicers = state.slicers
  if (gesture.kind === 'setSlicer') slicers = [...slicers, gesture.filter]
  if (gesture.kind === 'clearSlicer') slicers = slicers.filter((f) => !sameFilter(f, gesture.filter))
  return { state: { ...state, query, slicers }, result }
}
