// VFEB embedding file: the binary interchange format the engine's caption
// store reads. Little-endian layout:
//   magic "VFEB" | version u32 (=1) | dim u32 | count u64 |
//   dtype u8 (0 = float32) | 7 reserved bytes | count * dim float32 rows

import { open } from 'node:fs/promises'

export const VFEB_MAGIC = 'VFEB'
export const VFEB_VERSION = 1
export const VFEB_HEADER_SIZE = 28
export const DTYPE_FLOAT32 = 0

export function encodeHeader(dim: number, count: number): Buffer {
  const header = Buffer.alloc(VFEB_HEADER_SIZE)
  header.write(VFEB_MAGIC, 0, 'ascii')
  header.writeUInt32LE(VFEB_VERSION, 4)
  header.writeUInt32LE(dim, 8)
  header.writeBigUInt64LE(BigInt(count), 12)
  header.writeUInt8(DTYPE_FLOAT32, 20)
  return header
}

export function encodeRow(row: Float32Array): Buffer {
  const buf = Buffer.alloc(row.length * 4)
  for (let i = 0; i < row.length; i++) buf.writeFloatLE(row[i], i * 4)
  return buf
}

export interface VfebWriter {
  writeRow(row: Float32Array): Promise<void>
  close(): Promise<void>
}

// Streams rows and patches the count into the header on close, so the
// caller does not need to know the row count upfront.
export async function createVfebWriter(path: string, dim: number): Promise<VfebWriter> {
  const handle = await open(path, 'w')
  await handle.write(encodeHeader(dim, 0))
  let count = 0
  return {
    async writeRow(row: Float32Array) {
      if (row.length !== dim) {
        throw new Error(`row dim ${row.length} does not match file dim ${dim}`)
      }
      await handle.write(encodeRow(row))
      count += 1
    },
    async close() {
      await handle.write(encodeHeader(dim, count), 0, VFEB_HEADER_SIZE, 0)
      await handle.close()
    },
  }
}

export interface VfebFile {
  dim: number
  count: number
  rows: Float32Array[]
}

export async function readVfeb(path: string): Promise<VfebFile> {
  const handle = await open(path, 'r')
  try {
    const { buffer } = await handle.read(
      Buffer.alloc(VFEB_HEADER_SIZE), 0, VFEB_HEADER_SIZE, 0,
    )
    if (buffer.toString('ascii', 0, 4) !== VFEB_MAGIC) {
      throw new Error('bad magic: not a VFEB file')
    }
    const version = buffer.readUInt32LE(4)
    if (version > VFEB_VERSION) throw new Error(`unsupported VFEB version ${version}`)
    const dim = buffer.readUInt32LE(8)
    const count = Number(buffer.readBigUInt64LE(12))
    if (buffer.readUInt8(20) !== DTYPE_FLOAT32) throw new Error('unsupported dtype')
    const payload = Buffer.alloc(count * dim * 4)
    await handle.read(payload, 0, payload.length, VFEB_HEADER_SIZE)
    const rows: Float32Array[] = []
    for (let r = 0; r < count; r++) {
      const row = new Float32Array(dim)
      for (let c = 0; c < dim; c++) row[c] = payload.readFloatLE((r * dim + c) * 4)
      rows.push(row)
    }
    return { dim, count, rows }
  } finally {
    await handle.close()
  }
}
