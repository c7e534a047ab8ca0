/**
 * Wire documents shared with the warehouse HTTP API (see docs/http-api.md in
 * the repository root). The client treats queries as opaque server-owned
 * values: it never steps levels or edits filters itself.
 */

export interface GroupByEntry {
  dimension: string
  level: string
}

export interface MeasureEntry {
  measure: string
  aggregate: 'sum' | 'avg' | 'min' | 'max' | 'count'
}

export interface FilterDoc {
  dimension: string
  level: string
  op: 'eq' | 'ne' | 'lt' | 'le' | 'gt' | 'ge' | 'in'
  value: unknown
}

export interface CubeQueryDoc {
  fact_table: string
  group_by: GroupByEntry[]
  measures: MeasureEntry[]
  filters: FilterDoc[]
  flag_normality: boolean
}

export interface AxisDoc {
  dimension: string
  level: string
  values: string[]
}

export type CellValue = number | string | null

export interface CellDoc {
  group: string[]
  values: Record<string, CellValue>
  flags?: Record<string, string>
}

export interface CubeResultDoc {
  fact_table: string
  group_by: [string, string][]
  axes: AxisDoc[]
  cells: CellDoc[]
  totals: Record<string, CellValue>
}

export interface ApiErrorDoc {
  code: string
  message: string
  location?: string
}

export interface FactRowDoc {
  table: string
  row_id: number
  keys: Record<string, number>
  measures: Record<string, CellValue>
  batch_id: string
}

export interface DocumentDoc {
  id: number
  media_type: string
  checksum: string
  attrs: Record<string, string>
}

export interface AssemblyDoc {
  group: string
  report: FactRowDoc
  satellites: Record<string, FactRowDoc[]>
  documents: DocumentDoc[]
}

export type NavigateOp = 'roll_up' | 'drill_down' | 'slice' | 'dice'

export interface NavigateRequest {
  query: CubeQueryDoc
  op: NavigateOp
  args: Record<string, unknown>
}

export class ApiFailure extends Error {
  constructor(readonly error: ApiErrorDoc) {
    super(`${error.code}: ${error.message}`)
  }
}
