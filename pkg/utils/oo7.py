#!/usr/bin/env python3
import argparse
import hashlib
import logging
import os
import sys
import textwrap

from termcolor import colored

VERSION = "2.0"

# Logs, manifests and session files change on every run and are never compared.
SKIP_SUFFIXES = (".log", ".jsonl")


def print_manual():
    manual = textwrap.dedent(
        """
        oo7 - Run Artifact Digest Verification - DETERMINISM
        ====================================================

        NAME
            oo7.py - Compute SHA-256 / MD5 digests of run artifacts and compare runs.

        SYNOPSIS
            oo7.py PATH [--sha256 HASH] [--md5 HASH]
            oo7.py PATH --against OTHER_PATH
            oo7.py man

        DESCRIPTION
            A motionsrc command run twice with the same --seed must produce the same
            bytes: datasets, checkpoints, sampled motion files and metric tables.
            oo7 hashes a single file, or every file under a run directory, and
            reports which artifacts differ between two runs.

            Session logs (*.log) and manifests (*.jsonl) carry timestamps and are
            skipped when comparing directories.

        OPTIONS
            PATH              File or run directory to hash.
            --against PATH    Second file or run directory to compare with.
            --sha256 HASH     Expected SHA-256 of PATH (files only).
            --md5 HASH        Expected MD5 of PATH (files only).
            --verbose         Print every digest.
            --logging         Append the verification result to oo7.log.
            -V, --version     Show the version.

        EXAMPLES
            ./oo7.py runs/a/samples/seq_0009.mseq --verbose
            ./oo7.py runs/a --against runs/b

        VERSION
            oo7 version 2.0
    """
    )
    print(manual)


def calculate_hashes(filename):
    """(sha256, md5) hex digests of one file."""
    sha_hash = hashlib.sha256()
    md5_hash = hashlib.md5()
    with open(filename, "rb") as f:
        while chunk := f.read(4096):
            sha_hash.update(chunk)
            md5_hash.update(chunk)
    return sha_hash.hexdigest(), md5_hash.hexdigest()


def digest_tree(root):
    """Relative path -> sha256 for every comparable file under root."""
    if os.path.isfile(root):
        return {os.path.basename(root): calculate_hashes(root)[0]}
    digests = {}
    for dirpath, _, filenames in os.walk(root):
        for name in sorted(filenames):
            if name.endswith(SKIP_SUFFIXES):
                continue
            path = os.path.join(dirpath, name)
            digests[os.path.relpath(path, root)] = calculate_hashes(path)[0]
    return digests


def compare_runs(path_a, path_b):
    """
    Returns (matching, differing, only_a, only_b) lists of relative paths.
    """
    a = digest_tree(path_a)
    b = digest_tree(path_b)
    matching = sorted(k for k in a if k in b and a[k] == b[k])
    differing = sorted(k for k in a if k in b and a[k] != b[k])
    only_a = sorted(k for k in a if k not in b)
    only_b = sorted(k for k in b if k not in a)
    return matching, differing, only_a, only_b


def _verdict(ok, label):
    print(colored(f"{label} match.", "green") if ok else colored(f"{label} mismatch!", "red"))
    if ok:
        logging.info("%s verification passed.", label)
    else:
        logging.error("%s verification failed.", label)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if argv and argv[0].lower() == "man":
        print_manual()
        return 0

    parser = argparse.ArgumentParser(
        description="Hash run artifacts and compare two runs byte for byte.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("path", help="File or run directory")
    parser.add_argument("--against", help="Second file or run directory")
    parser.add_argument("--sha256", help="Expected SHA-256 value")
    parser.add_argument("--md5", help="Expected MD5 value")
    parser.add_argument("--verbose", action="store_true", help="Print every digest")
    parser.add_argument("-V", "--version", action="version", version=f"oo7.py version {VERSION}")
    parser.add_argument("--logging", action="store_true", help="Enable logging to oo7.log")
    args = parser.parse_args(argv)

    if args.logging:
        logging.basicConfig(
            filename="oo7.log",
            level=logging.INFO,
            format="%(asctime)s - %(levelname)s - %(message)s",
        )
        logging.info("Logging enabled")

    if not os.path.exists(args.path):
        print(colored(f"Error: '{args.path}' not found.", "red"))
        return 3

    if args.against:
        if not os.path.exists(args.against):
            print(colored(f"Error: '{args.against}' not found.", "red"))
            return 3
        matching, differing, only_a, only_b = compare_runs(args.path, args.against)
        if args.verbose:
            for name in matching:
                print(colored(f"  same  {name}", "green"))
        for name in differing:
            print(colored(f"  diff  {name}", "red"))
        for name in only_a:
            print(colored(f"  only in {args.path}: {name}", "yellow"))
        for name in only_b:
            print(colored(f"  only in {args.against}: {name}", "yellow"))
        identical = not (differing or only_a or only_b)
        _verdict(identical, f"Run artifacts ({len(matching)} files)")
        return 0 if identical else 1

    if os.path.isdir(args.path):
        for name, digest in sorted(digest_tree(args.path).items()):
            print(f"{digest}  {name}")
        return 0

    sha_digest, md5_digest = calculate_hashes(args.path)
    if args.verbose or not (args.sha256 or args.md5):
        print(f"SHA-256: {sha_digest}")
        print(f"MD5:     {md5_digest}")

    ok = True
    if args.sha256:
        match = sha_digest.lower() == args.sha256.lower()
        _verdict(match, "SHA-256")
        ok &= match
    if args.md5:
        match = md5_digest.lower() == args.md5.lower()
        _verdict(match, "MD5")
        ok &= match
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
