/**
 * Browser shell: wires the pivot grid, slicers, and the assembly panel to
 * the HTTP API. All analysis logic lives server-side; this file is DOM glue
 * around the pure modules (state, pivot, navigate, assembly).
 */

import { fetchDocument, openAssembly } from './assembly.js'
import { applyGesture, gestureEnabled, type Gesture, type NavigationPaths } from './navigate.js'
import { renderPivot, type PivotView } from './pivot.js'
import { decodeViewState, encodeViewState, initialState, type ViewState } from './state.js'
import { CancellingTransport, HttpTransport } from './transport.js'
import { ApiFailure, type CubeQueryDoc, type CubeResultDoc } from './types.js'

const esc = (text: string) =>
  text.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;')

export class App {
  private state: ViewState
  private nav: NavigationPaths = { paths: {} }
  private lastGrid: PivotView | null = null
  private readonly transport: CancellingTransport

  constructor(
    private readonly rootElement: HTMLElement,
    private readonly baseUrl: string,
    initialQuery: CubeQueryDoc,
  ) {
    this.transport = new CancellingTransport(new HttpTransport(baseUrl))
    this.state = decodeViewState(location.hash) ?? initialState(initialQuery)
  }

  async start(): Promise<void> {
    const response = await fetch(
      `${this.baseUrl}/facts/${this.state.query.fact_table}/navigation`,
    )
    if (response.ok) this.nav = (await response.json()) as NavigationPaths
    await this.refresh()
    this.rootElement.addEventListener('click', (event) => this.onClick(event))
    window.addEventListener('hashchange', () => {
      const decoded = decodeViewState(location.hash)
      if (decoded) {
        this.state = decoded
        void this.refresh()
      }
    })
  }

  private async refresh(): Promise<void> {
    const signal = this.transport.beginGesture()
    try {
      const result = await this.transport.query(this.state.query, signal)
      this.renderResult(result)
      location.hash = encodeViewState(this.state)
    } catch (error) {
      this.banner(error)
    }
  }

  private async gesture(gesture: Gesture): Promise<void> {
    if (!gestureEnabled(this.state, this.nav, gesture)) return
    const signal = this.transport.beginGesture()
    try {
      const outcome = await applyGesture(this.state, gesture, this.transport, this.nav, signal)
      this.state = outcome.state
      this.renderResult(outcome.result)
      location.hash = encodeViewState(this.state)
    } catch (error) {
      this.banner(error) // previous grid stays on screen
    }
  }

  private onClick(event: Event): void {
    const target = event.target as HTMLElement
    const drill = target.closest<HTMLElement>('[data-drill-dimension]')
    if (drill) {
      void this.gesture({
        kind: 'drill',
        dimension: drill.dataset.drillDimension!,
        level: drill.dataset.drillLevel!,
        value: drill.dataset.drillValue!,
      })
      return
    }
    const rollUp = target.closest<HTMLElement>('[data-rollup-dimension]')
    if (rollUp) {
      void this.gesture({ kind: 'rollUp', dimension: rollUp.dataset.rollupDimension! })
      return
    }
    const report = target.closest<HTMLElement>('[data-report-id]')
    if (report) {
      void this.showAssembly(report.dataset.reportGroup!, Number(report.dataset.reportId))
    }
  }

  private renderResult(result: CubeResultDoc): void {
    const view = renderPivot(result, this.state.layout)
    this.lastGrid = view
    if (view.kind === 'placeholder') {
      this.rootElement.innerHTML = `<p class="placeholder">${esc(view.message)}</p>`
      return
    }
    const head = view.columnHeaders
      .map((column) => `<th>${esc(column.join(' / '))}</th>`)
      .join('')
    const body = view.rowHeaders
      .map((row, i) => {
        const cells = view.cells[i]!
          .map((cell) =>
            cell.blank
              ? '<td class="blank"></td>'
              : `<td class="${cell.styleClass}">${esc(cell.text)}</td>`,
          )
          .join('')
        return `<tr><th scope="row">${esc(row.join(' / '))}</th>${cells}</tr>`
      })
      .join('')
    const rollups = this.state.query.group_by
      .map(
        (g) =>
          `<button data-rollup-dimension="${esc(g.dimension)}">roll up ${esc(g.dimension)} (${esc(g.level)})</button>`,
      )
      .join(' ')
    this.rootElement.innerHTML = `
      <div class="toolbar">${rollups}</div>
      <table class="pivot">
        <thead><tr><th>${esc(view.rowAxisTitles.join(' / '))}</th>${head}</tr></thead>
        <tbody>${body}</tbody>
      </table>
      <p class="totals">${esc(JSON.stringify(view.totals))}</p>`
  }

  private async showAssembly(group: string, reportId: number): Promise<void> {
    try {
      const assembly = await openAssembly(this.transport, group, reportId)
      const documents = await Promise.all(
        assembly.documents.map((d) => fetchDocument(this.transport, d)),
      )
      const panel = document.createElement('aside')
      panel.className = 'assembly'
      panel.innerHTML = `
        <h2>report ${assembly.report.row_id}</h2>
        <p>${esc(String(assembly.report.measures['conclusion'] ?? ''))}</p>
        <ul>${Object.entries(assembly.satellites)
          .flatMap(([table, rows]) =>
            rows.map((r) => `<li>${esc(table)} #${r.row_id}: ${esc(JSON.stringify(r.measures))}</li>`),
          )
          .join('')}</ul>
        <ul>${documents
          .map(
            (d) =>
              `<li>document #${d.document.id} (${esc(d.mediaType)})` +
              (d.integrityWarning ? ` <strong class="warning">${esc(d.integrityWarning)}</strong>` : '') +
              '</li>',
          )
          .join('')}</ul>`
      this.rootElement.appendChild(panel)
      this.state = { ...this.state, assemblyId: reportId }
    } catch (error) {
      this.banner(error)
    }
  }

  private banner(error: unknown): void {
    const message =
      error instanceof ApiFailure ? `${error.error.code}: ${error.error.message}` : String(error)
    const banner = document.createElement('div')
    banner.className = 'error-banner'
    banner.textContent = message
    this.rootElement.prepend(banner)
  }
}
