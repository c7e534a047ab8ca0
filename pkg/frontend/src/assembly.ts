/**
 * Complex-fact assemblies: fetch the report with its satellite results and
 * document list, then fetch document bytes lazily with SHA-256 verification
 * against the server's checksum header.
 */

import type { Transport } from './transport.js'
import type { AssemblyDoc, DocumentDoc } from './types.js'

export interface FetchedDocument {
  document: DocumentDoc
  bytes: Uint8Array
  mediaType: string
  /** set when the payload hash does not match the stored checksum */
  integrityWarning: string | null
}

export async function sha256Hex(bytes: Uint8Array): Promise<string> {
  const copy = new Uint8Array(bytes) // detach from any shared buffer
  const digest = await crypto.subtle.digest('SHA-256', copy)
  return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, '0')).join('')
}

export function openAssembly(
  transport: Transport,
  group: string,
  reportId: number,
  signal?: AbortSignal,
): Promise<AssemblyDoc> {
  return transport.assembly(group, reportId, signal)
}

export async function fetchDocument(
  transport: Transport,
  document: DocumentDoc,
  signal?: AbortSignal,
): Promise<FetchedDocument> {
  const { bytes, checksum, mediaType } = await transport.documentBytes(document.id, signal)
  const actual = await sha256Hex(bytes)
  const expected = checksum || document.checksum
  const integrityWarning =
    actual === expected
      ? null
      : `integrity check failed: payload hashes to ${actual.slice(0, 12)}…, expected ${expected.slice(0, 12)}…`
  return { document, bytes, mediaType, integrityWarning }
}
