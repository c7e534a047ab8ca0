/** Recording mock transport fed from a transcript of exchanges. */

import type { Transport } from '../src/transport.js'
import type {
  AssemblyDoc,
  CubeQueryDoc,
  CubeResultDoc,
  NavigateRequest,
} from '../src/types.js'

export interface Exchange {
  path: string
  request: unknown
  response: unknown
}

export interface RecordedCall {
  path: string
  body: unknown
}

export class MockTransport implements Transport {
  readonly calls: RecordedCall[] = []
  private cursor = 0

  constructor(private readonly exchanges: Exchange[]) {}

  private next(path: string, body: unknown): unknown {
    this.calls.push({ path, body })
    const exchange = this.exchanges[this.cursor]
    if (!exchange || exchange.path !== path) {
      throw new Error(`unexpected request ${this.cursor} to ${path}`)
    }
    this.cursor += 1
    return exchange.response
  }

  async navigate(request: NavigateRequest): Promise<{ query: CubeQueryDoc }> {
    return this.next('/navigate', request) as { query: CubeQueryDoc }
  }

  async query(query: CubeQueryDoc): Promise<CubeResultDoc> {
    return this.next('/query', query) as CubeResultDoc
  }

  async assembly(group: string, reportId: number): Promise<AssemblyDoc> {
    return this.next(`/complex/${group}/${reportId}`, null) as AssemblyDoc
  }

  async documentBytes(id: number) {
    return this.next(`/documents/${id}`, null) as {
      bytes: Uint8Array
      checksum: string
      mediaType: string
    }
  }
}
