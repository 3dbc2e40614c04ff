/** Minimal RFC 4180 CSV parsing for server exports. */

export function parseCsv(text: string): string[][] {
  const rows: string[][] = [];
  let row: string[] = [];
  let field = "";
  let inQuotes = false;
  let i = 0;
  const pushField = () => {
    row.push(field);
    field = "";
  };
  const pushRow = () => {
    pushField();
    rows.push(row);
    row = [];
  };
  while (i < text.length) {
    const ch = text[i];
    if (inQuotes) {
      if (ch === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i += 1;
        continue;
      }
      field += ch;
      i += 1;
      continue;
    }
    if (ch === '"' && field.length === 0) {
      inQuotes = true;
      i += 1;
      continue;
    }
    if (ch === ",") {
      pushField();
      i += 1;
      continue;
    }
    if (ch === "\r" && text[i + 1] === "\n") {
      pushRow();
      i += 2;
      continue;
    }
    if (ch === "\n") {
      pushRow();
      i += 1;
      continue;
    }
    field += ch;
    i += 1;
  }
  if (field.length > 0 || row.length > 0) {
    pushRow();
  }
  return rows;
}

/** A downloaded tabular result; row keys are the export's column names. */
export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

export function tableFromCsv(text: string): Table {
  const parsed = parseCsv(text);
  if (parsed.length === 0) {
    return { columns: [], rows: [] };
  }
  const columns = parsed[0];
  const rows = parsed.slice(1).map((cells) => {
    const row: Record<string, string> = {};
    columns.forEach((name, idx) => {
      row[name] = cells[idx] ?? "";
    });
    return row;
  });
  return { columns, rows };
}
