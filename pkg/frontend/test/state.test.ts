import { describe, expect, it } from 'vitest'

import { decodeViewState, encodeViewState, initialState, type ViewState } from '../src/state.js'
import type { CubeQueryDoc } from '../src/types.js'

const QUERY: CubeQueryDoc = {
  fact_table: 'biological',
  group_by: [
    { dimension: 'patient', level: 'member' },
    { dimension: 'time', level: 'month' },
  ],
  measures: [{ measure: 'value', aggregate: 'avg' }],
  filters: [{ dimension: 'patient', level: 'member', op: 'eq', value: 'P001' }],
  flag_normality: true,
}

describe('view state', () => {
  it('round-trips through the URL fragment', () => {
    const state: ViewState = {
      query: QUERY,
      layout: { rows: [0], columns: [1] },
      slicers: [{ dimension: 'patient', level: 'member', op: 'eq', value: 'P001' }],
      assemblyId: 23,
    }
    const fragment = encodeViewState(state)
    expect(fragment.startsWith('#')).toBe(true)
    expect(decodeViewState(fragment)).toEqual(state)
  })

  it('survives unicode values', () => {
    const state = initialState({
      ...QUERY,
      filters: [{ dimension: 'patient', level: 'member', op: 'eq', value: 'Pé-ü' }],
    })
    expect(decodeViewState(encodeViewState(state))).toEqual(state)
  })

  it('garbled fragments decode to null', () => {
    expect(decodeViewState('')).toBeNull()
    expect(decodeViewState('#')).toBeNull()
    expect(decodeViewState('#%%%not-base64%%%')).toBeNull()
    expect(decodeViewState('#eyJ4IjoxfQ')).toBeNull() // JSON but not a ViewState
  })

  it('initial layout puts the last group-by axis on columns', () => {
    const state = initialState(QUERY)
    expect(state.layout).toEqual({ rows: [0], columns: [1] })
    const single = initialState({ ...QUERY, group_by: [QUERY.group_by[0]!] })
    expect(single.layout).toEqual({ rows: [0], columns: [] })
  })
})
