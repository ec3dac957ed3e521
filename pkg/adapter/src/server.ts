// NDJSON protocol server: one JSON document per LF-terminated line over
// stdio or TCP. Handshake: {"op":"hello"} -> {"roles":{...},"name":...};
// requests carry ids and answer with {"id",...,"embeddings"} or
// {"id","error":{"code","message"}}.

import { readFile } from 'node:fs/promises'
import { createInterface } from 'node:readline'
import { createServer } from 'node:net'
import type { Readable, Writable } from 'node:stream'

import { ImageEncoder, TextEncoder, l2Normalize } from './encoders.js'

export interface AdapterConfig {
  jointTextModel: string
  jointImageModel: string
  sentenceModel: string
  exportBatchSize: number
}

export interface EncoderSet {
  jointText: TextEncoder
  jointImage: ImageEncoder
  sentence: TextEncoder
}

class ProtocolError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(message)
  }
}

function helloReply(encoders: EncoderSet) {
  return {
    roles: {
      'joint-text': encoders.jointText.dim,
      'joint-image': encoders.jointImage.dim,
      sentence: encoders.sentence.dim,
    },
    name: `adapter(${encoders.jointText.name}/${encoders.jointImage.name}/${encoders.sentence.name})`,
    preprocess: encoders.jointImage.preprocess,
  }
}

async function embedTexts(encoders: EncoderSet, msg: any): Promise<number[][]> {
  const texts = msg.texts
  if (!Array.isArray(texts) || texts.length === 0) {
    throw new ProtocolError('invalid_request', 'texts must be a non-empty list')
  }
  const role = msg.role ?? 'joint-text'
  let encoder: TextEncoder
  if (role === 'joint-text') encoder = encoders.jointText
  else if (role === 'sentence') encoder = encoders.sentence
  else throw new ProtocolError('bad_role', `role ${role} cannot embed texts`)
  const rows = await encoder.embedTexts(texts.map(String))
  return rows.map((r) => Array.from(l2Normalize(r)))
}

async function embedImage(encoders: EncoderSet, msg: any): Promise<number[][]> {
  let bytes: Buffer
  if (typeof msg.image_b64 === 'string') {
    try {
      bytes = Buffer.from(msg.image_b64, 'base64')
    } catch (err) {
      throw new ProtocolError('decode', `bad base64 payload: ${err}`)
    }
    if (bytes.length === 0) throw new ProtocolError('decode', 'empty base64 payload')
  } else if (typeof msg.path === 'string') {
    try {
      bytes = await readFile(msg.path)
    } catch (err) {
      throw new ProtocolError('io', `cannot read image: ${msg.path}`)
    }
  } else {
    throw new ProtocolError('invalid_request', 'embed_image needs path or image_b64')
  }
  const row = await encoders.jointImage.embedImage(bytes)
  return [Array.from(l2Normalize(row))]
}

export async function handleMessage(encoders: EncoderSet, line: string): Promise<object> {
  let msg: any
  try {
    msg = JSON.parse(line)
  } catch (err) {
    return { id: null, error: { code: 'invalid_request', message: `invalid JSON: ${err}` } }
  }
  if (msg.op === 'hello') return helloReply(encoders)
  const id = msg.id ?? null
  try {
    if (msg.op === 'embed_texts') return { id, embeddings: await embedTexts(encoders, msg) }
    if (msg.op === 'embed_image') return { id, embeddings: await embedImage(encoders, msg) }
    throw new ProtocolError('bad_op', `unknown op ${JSON.stringify(msg.op)}`)
  } catch (err) {
    if (err instanceof ProtocolError) {
      return { id, error: { code: err.code, message: err.message } }
    }
    return { id, error: { code: 'internal', message: String(err) } }
  }
}

export async function serveStream(encoders: EncoderSet, input: Readable, output: Writable) {
  const lines = createInterface({ input, crlfDelay: Infinity })
  for await (const line of lines) {
    if (!line.trim()) continue
    const reply = await handleMessage(encoders, line)
    output.write(JSON.stringify(reply) + '\n')
  }
}

export function serveTcp(encoders: EncoderSet, host: string, port: number) {
  const server = createServer((socket) => {
    void serveStream(encoders, socket, socket)
  })
  server.listen(port, host, () => {
    const address = server.address()
    if (address && typeof address === 'object') {
      process.stderr.write(`listening on ${address.address}:${address.port}\n`)
    }
  })
  return server
}
