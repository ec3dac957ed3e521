// Batch exporter: captions file (one per line) -> VFEB embedding file the
// engine's caption store loads directly.

import { readFile } from 'node:fs/promises'

import { TextEncoder, l2Normalize } from './encoders.js'
import { createVfebWriter } from './vfeb.js'

export interface ExportResult {
  count: number
  dim: number
}

export async function exportEmbeddings(
  encoder: TextEncoder,
  captionsPath: string,
  outPath: string,
  batchSize = 64,
): Promise<ExportResult> {
  if (batchSize < 1) throw new Error('export batch size must be >= 1')
  const raw = await readFile(captionsPath, 'utf-8')
  let lines = raw.split('\n')
  if (lines.length && lines[lines.length - 1] === '') lines.pop()
  const writer = await createVfebWriter(outPath, encoder.dim)
  let count = 0
  for (let start = 0; start < lines.length; start += batchSize) {
    const batch = lines.slice(start, start + batchSize)
    const rows = await encoder.embedTexts(batch)
    for (const row of rows) {
      await writer.writeRow(l2Normalize(row))
      count += 1
    }
  }
  await writer.close()
  return { count, dim: encoder.dim }
}
