// Converts the npm "mnist" package (10,000 bundled MNIST digits, ~1000 per
// class, stored as 784 floats in [0,1]) back into the classic IDX binary
// files that the eqprop loader reads.
//
// Usage:
//   npm install mnist
//   node scripts/make_mnist_idx.js [outdir]
//
// Output (outdir defaults to data/mnist):
//   train-images-idx3-ubyte   9000 images, 28x28, classes interleaved
//   train-labels-idx1-ubyte
//   t10k-images-idx3-ubyte    1000 images (held out, disjoint from train)
//   t10k-labels-idx1-ubyte
//
// The package stores each pixel rounded to 3 decimals; round(v*255) recovers
// the original byte exactly (max rounding error 0.0005*255 < 0.5). Classes
// are interleaved 0,1,...,9,0,1,... so any prefix of the output is balanced.

'use strict';
const fs = require('fs');
const path = require('path');

const mnist = require('mnist');

const outdir = process.argv[2] || path.join(__dirname, '..', 'data', 'mnist');
fs.mkdirSync(outdir, { recursive: true });

const perClass = [];
for (let d = 0; d < 10; d++) perClass.push(mnist[d].length);
const rounds = Math.min(...perClass);

const images = [];
const labels = [];
for (let i = 0; i < rounds; i++) {
  for (let d = 0; d < 10; d++) {
    const ex = mnist[d].get(i);
    const bytes = Buffer.alloc(784);
    for (let j = 0; j < 784; j++) bytes[j] = Math.round(ex[j] * 255);
    images.push(bytes);
    labels.push(d);
  }
}

const nTest = 1000;
const nTrain = Math.min(images.length - nTest, 9000);
console.log(`total ${images.length}, writing ${nTrain} train + ${nTest} test`);

function writeImages(file, imgs) {
  const header = Buffer.alloc(16);
  header.writeUInt32BE(0x00000803, 0);
  header.writeUInt32BE(imgs.length, 4);
  header.writeUInt32BE(28, 8);
  header.writeUInt32BE(28, 12);
  fs.writeFileSync(file, Buffer.concat([header, ...imgs]));
}

function writeLabels(file, labs) {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(0x00000801, 0);
  header.writeUInt32BE(labs.length, 4);
  fs.writeFileSync(file, Buffer.concat([header, Buffer.from(labs)]));
}

writeImages(path.join(outdir, 'train-images-idx3-ubyte'), images.slice(0, nTrain));
writeLabels(path.join(outdir, 'train-labels-idx1-ubyte'), labels.slice(0, nTrain));
writeImages(path.join(outdir, 't10k-images-idx3-ubyte'), images.slice(images.length - nTest));
writeLabels(path.join(outdir, 't10k-labels-idx1-ubyte'), labels.slice(labels.length - nTest));
console.log('wrote IDX files to ' + outdir);
