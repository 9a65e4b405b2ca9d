"""
UPIR 文本的 Lark 文法

操作的字段统一解析为 term（名字或 名字(参数, ...)），字段语义由 parser 中的转换器检查。
"""

UPIR_GRAMMAR = r"""
start: "upir.module" "{" func* "}"

func: "upir.func" [WORD] FUNCREF "(" [param ("," param)*] ")" ["->" WORD] region
param: sym ":" type
type: WORD dim*
dim: "[" [expr] "]"

region: "{" op* "}"

op: [LABEL] op_body

?op_body: "upir.spmd" term* region                           -> spmd
        | "upir.loop" term* region                           -> loop
        | "upir.loop-parallel" term* region                  -> loop_parallel
        | "upir.task" term* region                           -> task
        | "upir.data" term* region                           -> data_region
        | "upir.data_movement" "(" items ")" term*           -> data_movement
        | "upir.data_update" "(" items ")" term*             -> data_update
        | "upir.mm_allocator" "(" items ")" sym ":" type     -> mm_alloc
        | "upir.mm_deallocator" "(" items ")" sym            -> mm_dealloc
        | "upir.sync" WORD term* [region]                    -> sync
        | "upir.ext" term* "{" ext_entry* "}"                -> ext
        | "upir.if" expr region ["else" region]              -> if_op
        | "upir.decl" sym ":" WORD ["=" expr]                -> decl
        | "upir.assign" expr "=" expr                        -> assign
        | "upir.call" FUNCREF "(" [expr ("," expr)*] ")"     -> call
        | "upir.return" [expr]                               -> return_op

term: WORD                        -> bare_term
    | WORD "(" items ")"          -> paren_term

items: [item ("," item)*]

?item: expr
     | WORD                       -> word
     | WORD "(" items ")"         -> nested
     | WORD ":" item              -> pair
     | sym "(" items ")"          -> data_item
     | LABEL                      -> ref
     | FUNCREF                    -> funcref
     | BINOP                      -> op_token
     | INT                        -> int_token
     | subscript+                 -> sections

ext_entry: WORD ["=" ext_value]
?ext_value: STRING                -> string_value
          | expr
          | "[" [sym ("," sym)*] "]"  -> symbol_list

?expr: CONST                      -> const
     | sym                        -> symbol
     | sym subscript+             -> index
     | FUNCREF "(" ")"            -> intrinsic
     | "(" expr BINOP expr ")"    -> binary
     | "(" BINOP expr ")"         -> unary

subscript: "[" expr "]"                                -> sub_index
         | "[" [expr] ":" [expr] [":" expr] "]"        -> sub_section

sym: SYMBOL | QSYMBOL

SYMBOL: /%(?!c-?\d)[A-Za-z_][A-Za-z0-9_]*/
QSYMBOL: /%"[A-Za-z_][A-Za-z0-9_]*"/
CONST: /%c-?\d+(\.\d*)?([eE][-+]?\d+)?/
LABEL: /#\d+/
FUNCREF: /@[A-Za-z_][A-Za-z0-9_]*/
WORD: /(?!upir\.)[A-Za-z_][A-Za-z0-9_]*(-[A-Za-z_][A-Za-z0-9_]*)*/
INT: /\d+/
BINOP: /<=|>=|==|!=|[-+*\/%<>]/
STRING: /"([^"\\]|\\.)*"/

%ignore /\/\/[^\n]*/
%import common.WS
%ignore WS
"""
