#!/usr/bin/env python3
"""Reference logprob server for the biasknn HTTP backend.

Speaks the native wire protocol:

    POST /score
    request:  {"model": str, "prompt": str, "candidates": [str, ...]}
    response: {"scores": [{"candidate": str, "logprob": float,
                           "logit": float}, ...]}   (request order)

Each candidate (usually " " + verbalizer word) is tokenized as-is and
scored by its FIRST sub-token at the next-token position after the
prompt. logprob is the full-vocabulary log-softmax value; logit is the
raw pre-softmax score.

Usage:
    python3 tools/gpt2_server.py --model gpt2-large --port 8080
"""

import argparse
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="gpt2-large")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args()

    tokenizer = AutoTokenizer.from_pretrained(args.model)
    model = AutoModelForCausalLM.from_pretrained(args.model)
    model.to(args.device)
    model.eval()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (http.server API)
            if self.path.rstrip("/") != "/score" and self.path != "/score":
                self.send_error(404)
                return
            try:
                length = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(length))
                prompt = body["prompt"]
                candidates = body["candidates"]
            except (TypeError, KeyError, ValueError) as exc:
                self.send_error(400, f"bad request: {exc}")
                return
            if not prompt:
                self.send_error(400, "empty prompt")
                return

            input_ids = tokenizer(prompt, return_tensors="pt").input_ids
            input_ids = input_ids.to(args.device)
            with torch.no_grad():
                logits = model(input_ids).logits[0, -1].float()
            logprobs = torch.log_softmax(logits, dim=-1)

            scores = []
            for candidate in candidates:
                token_ids = tokenizer(candidate).input_ids
                if not token_ids:
                    self.send_error(400, f"untokenizable candidate: {candidate!r}")
                    return
                first = token_ids[0]
                scores.append({
                    "candidate": candidate,
                    "logprob": float(logprobs[first]),
                    "logit": float(logits[first]),
                })

            payload = json.dumps({"scores": scores}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *log_args):
            pass  # keep stdout quiet under batched scoring

    server = ThreadingHTTPServer((args.host, args.port), Handler)
    print(f"serving {args.model} on http://{args.host}:{args.port}/score")
    server.serve_forever()


if __name__ == "__main__":
    main()
