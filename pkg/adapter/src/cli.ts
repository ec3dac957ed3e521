#!/usr/bin/env node
// Entry point: `serve` answers protocol requests on stdio or TCP,
// `export` writes a VFEB embedding file for a captions file.

import { exit } from 'node:process'

import { makeImageEncoder, makeTextEncoder } from './encoders.js'
import { exportEmbeddings } from './export.js'
import { AdapterConfig, EncoderSet, serveStream, serveTcp } from './server.js'

const USAGE = `usage:
  retag-adapter serve  [--joint-text MODEL] [--joint-image MODEL] [--sentence MODEL]
                       [--listen stdio|tcp:HOST:PORT]
  retag-adapter export --captions FILE --out FILE [--model MODEL] [--batch N]

models: hash-<dim> (deterministic, no downloads), use (universal sentence
encoder), mobilenet (image). Defaults: hash-512 text, hash-512 image,
hash-384 sentence.`

interface Args {
  positional: string[]
  flags: Map<string, string>
}

function parseArgs(argv: string[]): Args {
  const positional: string[] = []
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (arg.startsWith('--')) {
      const value = argv[i + 1]
      if (value === undefined || value.startsWith('--')) {
        flags.set(arg.slice(2), 'true')
      } else {
        flags.set(arg.slice(2), value)
        i++
      }
    } else {
      positional.push(arg)
    }
  }
  return { positional, flags }
}

function defaultConfig(flags: Map<string, string>): AdapterConfig {
  return {
    jointTextModel: flags.get('joint-text') ?? 'hash-512',
    jointImageModel: flags.get('joint-image') ?? 'hash-512',
    sentenceModel: flags.get('sentence') ?? 'hash-384',
    exportBatchSize: Number(flags.get('batch') ?? '64'),
  }
}

function buildEncoders(config: AdapterConfig): EncoderSet {
  return {
    jointText: makeTextEncoder(config.jointTextModel, 'joint'),
    jointImage: makeImageEncoder(config.jointImageModel),
    sentence: makeTextEncoder(config.sentenceModel, 'sentence'),
  }
}

async function main() {
  const [command, ...rest] = process.argv.slice(2)
  const { flags } = parseArgs(rest)
  const config = defaultConfig(flags)

  if (command === 'serve') {
    const encoders = buildEncoders(config)
    const listen = flags.get('listen') ?? 'stdio'
    if (listen === 'stdio') {
      await serveStream(encoders, process.stdin, process.stdout)
      return
    }
    const tcp = /^tcp:(.+):(\d+)$/.exec(listen)
    if (!tcp) {
      console.error(`bad --listen value: ${listen}\n${USAGE}`)
      exit(2)
    }
    serveTcp(encoders, tcp[1], Number(tcp[2]))
    return
  }

  if (command === 'export') {
    const captions = flags.get('captions')
    const out = flags.get('out')
    if (!captions || !out) {
      console.error(USAGE)
      exit(2)
    }
    const model = flags.get('model') ?? config.jointTextModel
    const encoder = makeTextEncoder(model, 'joint')
    const result = await exportEmbeddings(encoder, captions, out, config.exportBatchSize)
    console.log(JSON.stringify({ out, model, ...result }))
    return
  }

  console.error(USAGE)
  exit(2)
}

main().catch((err) => {
  console.error(String(err?.stack ?? err))
  exit(1)
})
