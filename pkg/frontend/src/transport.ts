/**
 * Server transport. The UI depends only on this interface, so tests swap in
 * a recording mock and the production build uses fetch against the API.
 *
 * At most one gesture is in flight per view: issuing a new request through
 * the same CancellingTransport aborts the superseded one.
 */

import {
  ApiFailure,
  type ApiErrorDoc,
  type AssemblyDoc,
  type CubeQueryDoc,
  type CubeResultDoc,
  type NavigateRequest,
} from './types.js'

export interface Transport {
  navigate(request: NavigateRequest, signal?: AbortSignal): Promise<{ query: CubeQueryDoc }>
  query(query: CubeQueryDoc, signal?: AbortSignal): Promise<CubeResultDoc>
  assembly(group: string, reportId: number, signal?: AbortSignal): Promise<AssemblyDoc>
  documentBytes(
    id: number,
    signal?: AbortSignal,
  ): Promise<{ bytes: Uint8Array; checksum: string; mediaType: string }>
}

export class HttpTransport implements Transport {
  constructor(private readonly baseUrl: string) {}

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
      signal,
    })
    const payload = await response.json()
    if (!response.ok) throw new ApiFailure(payload as ApiErrorDoc)
    return payload as T
  }

  private async get<T>(path: string, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.baseUrl + path, { signal })
    const payload = await response.json()
    if (!response.ok) throw new ApiFailure(payload as ApiErrorDoc)
    return payload as T
  }

  navigate(request: NavigateRequest, signal?: AbortSignal) {
    return this.post<{ query: CubeQueryDoc }>('/navigate', request, signal)
  }

  query(query: CubeQueryDoc, signal?: AbortSignal) {
    return this.post<CubeResultDoc>('/query', query, signal)
  }

  assembly(group: string, reportId: number, signal?: AbortSignal) {
    return this.get<AssemblyDoc>(`/complex/${group}/${reportId}`, signal)
  }

  async documentBytes(id: number, signal?: AbortSignal) {
    const response = await fetch(`${this.baseUrl}/documents/${id}`, { signal })
    if (!response.ok) throw new ApiFailure((await response.json()) as ApiErrorDoc)
    const bytes = new Uint8Array(await response.arrayBuffer())
    return {
      bytes,
      checksum: response.headers.get('x-content-checksum') ?? '',
      mediaType: response.headers.get('content-type') ?? 'application/octet-stream',
    }
  }
}

/** Wraps a transport so each new gesture cancels the one before it. */
export class CancellingTransport implements Transport {
  private controller: AbortController | null = null

  constructor(private readonly inner: Transport) {}

  /** Abort whatever is in flight and open a fresh cancellation scope. */
  beginGesture(): AbortSignal {
    this.controller?.abort()
    this.controller = new AbortController()
    return this.controller.signal
  }

  navigate(request: NavigateRequest, signal?: AbortSignal) {
    return this.inner.navigate(request, signal ?? this.controller?.signal)
  }

  query(query: CubeQueryDoc, signal?: AbortSignal) {
    return this.inner.query(query, signal ?? this.controller?.signal)
  }

  assembly(group: string, reportId: number, signal?: AbortSignal) {
    return this.inner.assembly(group, reportId, signal ?? this.controller?.signal)
  }

  documentBytes(id: number, signal?: AbortSignal) {
    return this.inner.documentBytes(id, signal ?? this.controller?.signal)
  }
}
